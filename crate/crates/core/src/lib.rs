pub mod bubbles;
pub mod hmap;
pub mod latent;
pub mod layout;
pub mod maskgen;
pub mod narrative;
pub mod pipeline;
pub mod raster;
pub mod seeds;
pub mod text;
