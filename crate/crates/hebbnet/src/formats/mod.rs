pub mod cifar;
pub mod idx;
pub mod ppm;
