"""Few-shot glyph generation toolkit: projected character loss, basis-font
selection, content fusion and style refinement on synthetic fonts."""

__version__ = "0.1.0"

from ._backend import NAME as BACKEND
from .config import RunConfig, load_config
from .errors import (CFFontError, ClusteringError, DimensionMismatchError, ImageFormatError,
                     NormalizationError, ShapeMismatchError, StageError, TrainingDivergedError,
                     ValidationError)
from .glyphgen import (CharSkeleton, GlyphImage, SyntheticFontSpec, build_dataset, default_alphabet,
                       read_pgm, render_glyph, write_pgm)
from .projection import ProjectedDistribution, ProjectionPlan, make_plan, project
from .pcl import PclConfig, pcl, pcl_kl, pcl_wdl, reconstruction_loss
from .cluster import BasisSet, pam, select_basis
from .fusion import FusionWeights, fuse_content, fusion_weights
from .isr import IsrConfig, refine
from .metrics import l1, rmse, ssim
from .toymodel import ToyModelParams, init_params, load_checkpoint, save_checkpoint
