"""Point cloud restoration against adversarial corruption.

Defenses compose as sklearn-style transformers: statistical outlier
removal, occupancy-field-guided coordinate optimization, and re-meshing of
the field's iso-surface. Corruption generators, metrics, file IO, and a
batch CLI round out the toolkit.
"""

__version__ = "0.1.0"

from .corruption import (
    adaptive_attack,
    add_outliers,
    deform,
    jitter_on_surface,
    mean_cross_entropy,
    remove_local_part,
)
from .errors import (
    BadMagic,
    CloudAnnihilated,
    DegenerateCloud,
    DimensionMismatch,
    EmptyCloud,
    EmptyMesh,
    EmptySurface,
    FlatGradient,
    InvalidPointCloud,
    InvalidSpec,
    PcrestoreError,
    TooFewPoints,
    TruncatedFile,
)
from .fields import (
    AnalyticField,
    Box,
    Capsule,
    Difference,
    Intersection,
    MlpField,
    MlpLayer,
    OccupancyField,
    Sphere,
    Torus,
    Union,
    field_from_json,
    load_field,
    load_mlp_field,
    parse_field_spec,
    save_mlp_field,
)
from .fixtures import FIXTURE_SPECS, fixture_field, fixture_names, reference_cloud
from .geometry import (
    NormalizationTransform,
    SpatialIndex,
    TriangleMesh,
    normalize_unit_sphere,
    resample_to_count,
    sample_mesh_surface,
)
from .io import read_points, read_ply, read_xyz, write_obj, write_ply, write_points, write_xyz
from .metrics import MetricsReport, chamfer, evaluate, hausdorff, nn_gap, uniformity_cv
from .pipeline import (
    PipelineInput,
    PipelineOptions,
    StageSpec,
    make_defense,
    parse_corruption,
    run_pipeline,
    sweep_lambda,
)
from .remesh import GridSpec, MarchingCubesRestorer, marching_cubes, remesh_defense
from .restore import (
    AdamState,
    OptimizationRestorer,
    RestorationConfig,
    RestorationTrace,
    adam_update,
    cross_entropy,
    distribution_loss,
    geometry_loss,
    restore,
)
from .sor import SorConfig, StatisticalOutlierFilter, sor_filter, sor_scores
from .validation import as_rng, check_points

__all__ = [name for name in dir() if not name.startswith("_")]
