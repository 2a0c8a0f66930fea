//! Kinematic analysis of plane bar structures.
//!
//! Two independent routes decide whether a structure is geometrically
//! stable: an exact rank test on the hinge-constraint Jacobian
//! ([`oracle`]), and a small convolutional network ([`nn`]) trained on
//! rendered images of the structures ([`render`], [`dataset`], [`trainer`]).
//! [`interpret`] visualizes what the network looks at.

pub mod catalog;
pub mod dataset;
pub mod interpret;
pub mod nn;
pub mod oracle;
pub mod raster;
pub mod render;
pub mod structure;
pub mod trainer;

pub use catalog::{builtin_catalog, Catalog, CatalogEntry};
pub use oracle::{binary_label, classify_stability, Classification, Verdict};
pub use structure::{parse_structure, serialize_structure, Bar, Joint, JointKind, Point, Structure, StructureBuilder, StructureError};
pub use raster::{RgbImage, IMAGE_SIZE};
pub use render::{render, RenderStyle};
