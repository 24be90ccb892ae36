pub mod adaptive;
pub mod image;
pub mod io;
pub mod loss;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod synth;
pub mod train;
pub mod vq;
