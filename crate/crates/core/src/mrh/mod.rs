//! Attention-geometry laboratory: polytopes generated by attention heads,
//! Minkowski sums of tiles, membership solvers with certificates, and the
//! interpolation experiment on token manifolds.

mod attention;
mod geodesic;
mod minkowski;
mod polytope;
mod verify;
mod zonotope;

pub use attention::{
    affine_transport, exposed_face, face_gap_along, head_output, log_uniform, low_temp_bound, multi_head_model,
    multi_head_sample, random_subset, softmax, support_restriction_check, AttentionHead, HeadOutput, LowTempBound,
    MultiHeadOutput, SupportRestrictionReport,
};
pub use geodesic::{
    circle_tokens, geodesic_experiment, knn_graph, shortest_path, DistanceMetric, GeodesicConfig, GeodesicCurves,
    PairSelection,
};
pub use minkowski::{
    dirichlet, generate_mrh_data, minkowski_membership, BlockCode, MinkowskiMembership, MinkowskiModel, MrhSamples, Tile,
};
pub use polytope::{hull_membership, support_function, Membership, Polytope};
pub use verify::{verify_suite, ClaimVerdict, Suite, VerifyConfig};
pub use zonotope::{decomposition_support, zonotope_nonidentifiability, Segment, ZonotopeReport};
