//! ControlBurn: feature selection by sparsifying tree ensembles.
//!
//! The pipeline has two major steps: grow a diverse forest (incremental depth
//! bagging or bag-boosting), then prune it by solving a non-negative weighted
//! lasso over the tree weights. A feature is selected when at least one tree
//! with non-zero weight splits on it. Because the penalty charges each tree
//! for every feature it uses, the solver concentrates the weight of a group
//! of correlated features onto a single representative, which makes the
//! selected set robust to the importance dilution that plain impurity
//! rankings suffer on correlated data.
//!
//! Modules follow the pipeline: [`dataset`] (ingestion, resampling,
//! synthetic correlated features), [`tree`] (depth-limited CART),
//! [`grow`] (forest construction), [`prune`] (the lasso solve),
//! [`select`] (end-to-end selection with bisection and refitting), and
//! [`eval`] (metrics and experiment drivers).

pub mod dataset;
pub mod eval;
pub mod grow;
pub mod prune;
pub mod select;
pub mod tree;

mod util;

pub use dataset::{Bag, Dataset, FoldPlan, Task};
pub use grow::{Forest, GrowthMode, GrowthTrace};
pub use prune::{CostSpec, LossKind, PruneProblem, Solution};
pub use select::{ControlBurnConfig, RandomForest, SelectionResult};
pub use tree::{SplitCriterion, TreeConfig, TreeModel};
