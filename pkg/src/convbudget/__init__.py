"""convbudget: conv-net architectures as data, with an exact arithmetic
budget, cost-preserving rewrites, budget-constrained search, and a
micro-benchmark that checks the budget against measured runtimes."""

from .model import (Activation, Architecture, LayerKind, LayerSpec, StageView,
                    Violation, conv, fully_connected, max_pool,
                    spatial_pyramid_pool, stages, validate)
from .notation import (NotationError, dumps_architecture, load_architecture,
                       loads_architecture, parse_architecture,
                       render_architecture, save_architecture)
from .shapes import (PairContext, ShapeError, ShapeTrace, apply_stride_override,
                     conv_out_size, default_padding, infer_shapes)
from .complexity import (ComplexityReport, ComplexityTerm, diff_complexity,
                         display_ratio, layer_complexity, parameter_counts,
                         total_complexity, train_time_estimate)
from .rewrite import (RewriteCertificate, RewriteError, RewriteStep,
                      append_depth, delay_all_subsampling, delay_subsampling,
                      factorize_filter, insert_one_by_one, insert_pooling_stage,
                      parse_script, run_script, solve_interior_width,
                      trade_depth_width, trade_width_filter, verify_replacement)
from .search import (SearchConfig, SearchResult, budget_search,
                     enumerate_candidates, exhaustive_search, replay_trace)
from .bench import (BenchError, CorrelationReport, Tensor, TimingRecord,
                    conv_forward, correlate, max_pool_forward,
                    time_architecture, time_layer)

__version__ = "0.1.0"
