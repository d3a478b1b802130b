"""Two-layer residual sparsifying transform learning for low-dose CT.

The package learns a pair of unitary patch transforms by exact block
coordinate descent and uses them as a fixed regularizer for penalized
weighted least-squares reconstruction, alongside FBP and edge-preserving
PWLS baselines and a small parallel/fan-beam simulator.
"""

__version__ = "0.1.0"

from .core import (
    Image,
    ImageGrid,
    PatchConfig,
    PatchSet,
    aggregate_patches,
    dct2_matrix,
    extract_patches,
    full_svd,
    hard_threshold,
    patch_coverage,
    patch_grid_count,
)
from .io import (
    FormatError,
    read_image,
    read_model,
    read_phantom_spec,
    read_sinogram,
    write_image,
    write_model,
    write_pgm16,
    write_phantom_spec,
    write_sinogram,
)
from .learning import (
    TrainConfig,
    TrainReport,
    TwoLayerTransformLearner,
    subsample_patches,
    train,
)
from .metrics import circular_roi, downsample_image, psnr, rmse
from .model import (
    SparseCodes,
    TwoLayerModel,
    code_patches,
    layer2_residual,
    objective_p0,
    objective_regularizer,
    regularizer_gradient,
    regularizer_hessian_diag,
    sparse_code_layer1,
    sparse_code_layer2,
    update_transform1,
    update_transform2,
)
from .recon import (
    EpConfig,
    ReconConfig,
    ep_objective,
    ep_roughness,
    fbp,
    image_update,
    pwls_objective,
    reconstruct_ep,
    reconstruct_transform,
    wls_data_term,
)
from .sim import (
    HU_WATER,
    MU_WATER,
    PRESET_NAMES,
    DoseConfig,
    Ellipse,
    Phantom,
    hu_to_mu,
    make_phantom,
    mu_to_hu,
    phantom_preset,
    simulate_sinogram,
)
from .tomo import (
    FAN,
    PARALLEL,
    Geometry,
    Sinogram,
    UnsupportedGeometryError,
    back_project,
    data_majorizer,
    forward_project,
    noise_uniformity_weights,
    system_matrix,
)
