"""Maximum-likelihood CP decomposition of binary tensors."""

from .decomp import (
    AllInfeasible,
    AllStartsFailed,
    DegenerateColumn,
    FitConfig,
    FitResult,
    bic,
    effective_params,
    fit,
    line_search,
    log_likelihood,
    normalize,
    predict_proba,
    select_rank,
    update_mode,
)
from .glm import GlmProblem, GlmSolution, NonFinite, SingularDesign, fit_glm
from .links import FAMILIES, LinkSpec, make_link
from .metrics import DegenerateLabels, auc, mer, relative_loss, rmse
from .sim import (
    BlockModelSpec,
    BooleanModelSpec,
    flip_noise,
    gen_block_tensor,
    gen_boolean_tensor,
    gen_cp_signal,
    quantize_latent,
)
from .tensor_ops import (
    BinaryTensor,
    CpFactors,
    cp_reconstruct,
    fold,
    frobenius_norm,
    khatri_rao,
    khatri_rao_excluding,
    loss,
    max_norm,
    unfold,
)

__version__ = "0.1.0"
