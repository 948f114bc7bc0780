pub mod aa;
pub mod align;
pub mod frame;
pub mod geometry;
pub mod io;
pub mod mrh;
pub mod sae;
pub mod stats;
pub mod tokens;
