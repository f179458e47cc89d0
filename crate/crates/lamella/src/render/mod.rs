//! Rendering: ray-marched semantic fields and rasterized mesh layers.

pub mod composite;
pub mod raster;
pub mod target;
pub mod view;

pub use composite::{
    composite_color, composite_filtered, composite_semantic_color, composite_semantic_map,
    semantic_transmittances,
};
pub use raster::{rasterize_layers, rasterize_layers_k, RasterOptions};
pub use target::RenderTarget;
pub use view::{render_view, RenderOptions, DOMAIN_PAD};

