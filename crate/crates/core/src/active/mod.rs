//! Choosing where to label next: acquisition scores, reservoir selection,
//! continuous search in a domain, boundary-pair segment search and kernel
//! perturbation, plus the loop that drives them.

pub mod boundary;
pub mod hull;
pub mod perturb;
pub mod run;
pub mod score;

pub use boundary::{boundary_pairs, segment_minimum, select_boundary_pairs, BoundaryPairSet};
pub use hull::{hull_contains, select_in_hull, Domain, HullDomain, HullSearchResult};
pub use perturb::{perturb_candidates, KernelKind, PerturbKernel};
pub use run::{active_loop, ActiveConfig, ActiveOutcome, DomainSpec, HistoryEntry, Oracle, Strategy};
pub use score::{
    fitness, most_informative, score, score_rows, select_from_reservoir, AcquisitionScore, Fitness,
    ProbabilisticClassifier, Reservoir, ScoreKind, FITNESS_THRESHOLD,
};
