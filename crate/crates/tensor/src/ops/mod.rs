pub(crate) mod conv;
mod elementwise;
mod layout;
mod linalg;
mod norm;
mod pool;
mod reduce;
