"""Point-cloud segmentation from sparse line scribbles, in numpy.

Point clouds and labels in SemanticKITTI formats, pyramid local
semantic-context descriptors, a mean-teacher point classifier, class-range
balanced pseudo-labeling, metrics, and a synthetic street-scene generator.
"""

from .binning import AnnulusSpec, CylGridSpec, annulus_index, annulus_width, cyl_bin_index
from .core import SEMANTIC_KITTI, ClassMap, PointCloud, remap_labels, split_supervision, validate_frame
from .crb import (
    STRATEGIES,
    ConfidenceStore,
    FramePseudoLabels,
    ThresholdTable,
    collect_confidences,
    determine_thresholds,
    generate,
    merge_labels,
    solve_pseudo_labels,
)
from .errors import ScribbleLidarError
from .mean_teacher import (
    AugmentConfig,
    TeacherStudent,
    TrainConfig,
    TrainFrame,
    consistency_loss,
    ema_update,
    predict,
    supervised_loss,
    train,
)
from .metrics import ConfusionMatrix, confusion, miou, pseudo_label_accuracy, relative_performance
from .pls import PlsConfig, augment_points, compute_pls, pls_descriptors
from .synth import SYNTH_CLASS_MAP, SceneConfig, generate_dataset, generate_scene, generate_scribbles

__version__ = "0.1.0"
