"""cemmaf: contrastive explanations for image classifiers.

Pertinent negatives are found by subgradient descent on a decoder manifold
under monotonic attribute functions; pertinent positives by ISTA over a
relaxed superpixel mask followed by greedy completion.  Batch metrics score
both against external feature rankings.
"""

from .autodiff import (
    Graph,
    GraphBuilder,
    GraphError,
    NonFiniteError,
    backward_grad,
    finite_diff_grad,
    forward_backward,
    forward_eval,
)
from .bundle import (
    Attribute,
    AttributeDef,
    BundleError,
    BundleFormatError,
    GraphFn,
    ModelBundle,
    load_bundle,
    read_weights,
    save_bundle,
    write_weights,
)
from .config import ConfigError, RunConfig, load_config, parse_config
from .csearch import NotFound, update_c
from .fixtures import FixtureSpec, generate_fixture_set, parse_fixture_spec, train_fixture
from .metrics import (
    ExplanationBatch,
    ExplanationRecord,
    MetricsError,
    aggregate_report,
    batch_correlation,
    parse_rankings,
    pp_accuracy,
    pp_correlation,
    pp_feature_count,
)
from .pn import AttributeDelta, PNHyperParams, PNResult, pn_objective, solve_pn
from .pp import (
    PPHyperParams,
    PPResult,
    pp_objective,
    pp_score_trace,
    shrink,
    soft_threshold,
    solve_pp,
)
from .segmentation import (
    SegmentationError,
    SuperpixelPartition,
    apply_mask,
    export_label_map,
    grid_segment,
    import_label_map,
)

__version__ = "0.1.0"
