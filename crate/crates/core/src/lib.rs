//! Equivariant neural ODEs on manifolds.
//!
//! Vector fields are parameterized by differential invariants of an SO(2)
//! action, so the diffeomorphisms they generate commute with the action for
//! every choice of network weights. The crate covers the geometries and
//! their actions ([`manifold`]), jet-space prolongation and invariance checks
//! ([`jet`], [`invariants`]), integration ([`odeint`]), the networks and a
//! batched reverse-mode tape ([`net`], [`tape`]), plain and tangent-bundle
//! models ([`models`]), induced actions on scalars, densities and vector
//! fields ([`fields`]), training ([`train`]), and output files and the
//! command line ([`report`], [`cli`]).

pub mod cli;
pub mod error;
pub mod fields;
pub mod invariants;
pub mod jet;
pub mod manifold;
pub mod models;
pub mod net;
pub mod odeint;
pub mod report;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use manifold::{Geometry, GroupElement, Point, TangentVector};
pub use models::{Diffeomorphism, Frame, ModelKind, NodeModel};
