//! Datasets: domain records, the synthetic ground-truth world, the biased
//! serving simulator, the MovieLens loader, user-disjoint splitting, and the
//! TSV interchange format.

mod movielens;
mod split;
mod traffic;
mod tsv;
mod types;
mod world;

pub use movielens::{load_movielens_1m, RatingRecord};
pub use split::split_by_user;
pub use traffic::{simulate_served_traffic, PolicyConfig, ServedLog};
pub use tsv::{
    load_candidates, load_interactions, load_queries, load_world_dir, load_world_meta,
    render_candidates, render_interactions, render_queries, served_log_from_records,
    write_world_dir, LoadedWorld, WorldMeta, CANDIDATES_FILE, INTERACTIONS_FILE, META_FILE,
    QUERIES_FILE,
};
pub use types::{Candidate, Interaction, Provenance, Query};
pub use world::{
    classify_engagement, generate_world, GroundTruthWorld, Region, WorldConfig, ENGAGING_P,
    EPS_IRRELEVANT,
};
