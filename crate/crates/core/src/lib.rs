//! Geolocation prediction heads for text embeddings.
//!
//! The crate maps a fixed-size text embedding to either a point, a set of
//! weighted points, or a mixture of spherical Gaussians on the
//! longitude/latitude plane, trains those heads with squared-distance and
//! negative log-likelihood losses, and evaluates them with great-circle
//! metrics. Per-user home locations are estimated by summarizing a user's
//! per-tweet mixtures on a grid.
//!
//! Modules, bottom-up:
//!
//! - [`geo`]: coordinates and distances.
//! - [`gmm`]: activations, Gaussian densities, mixture predictions.
//! - [`loss`]: the four loss variants and their analytic gradients.
//! - [`head`]: linear heads, output layouts, training, checkpoints.
//! - [`features`]: tweet ingestion, feature composition, the hashing encoder.
//! - [`metrics`]: SAE, Acc@161, CAE, PRA and COV.
//! - [`useragg`]: per-user location estimation.
//! - [`synthetic`]: a seeded five-city corpus for experiments and tests.

pub mod error;
pub mod features;
pub mod geo;
pub mod gmm;
pub mod head;
pub mod loss;
pub mod metrics;
pub mod synthetic;
pub mod useragg;

pub use error::{GeoError, Result};
pub use geo::GeoPoint;
pub use gmm::{GaussianPeak, GmmPrediction};
pub use head::{HeadConfig, HeadKind, LinearHead, ModelBundle};
