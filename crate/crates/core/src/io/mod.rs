pub mod container;
pub mod netpbm;

pub use container::{read_container, write_container, TensorEntry, WeightContainer};
pub use netpbm::{normalize, read_image_rgb, read_pgm, read_pgm_mask, read_ppm, write_pgm_mask};
