//! PNG renderings: stem feature-map grids, 2-D embedding scatter plots and
//! loss curves.

mod canvas;
mod plots;

pub use canvas::{identity_color, Canvas};
pub use plots::{
    edge_map_image, feature_map_grid, feature_map_pair, pca_2d, scatter_plot, silhouette, training_curves,
    training_curves_csv, FeatureMapSet,
};
