pub mod autodiff;
pub mod camera;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod network;
pub mod skeleton;
pub mod synth;
pub mod trajectory;
