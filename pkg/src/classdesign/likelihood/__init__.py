from .epidemic import EpiBayesOracle, EpiLikelihood, death_transition_prob
from .evidence import (
    EvidenceError,
    EvidenceResult,
    ImpossibleData,
    PosteriorSummary,
    fd_hessian,
    gauss_hermite_rule,
    gh_evidence,
    laplace_evidence,
    posterior_mode,
    posterior_model_probs,
)
from .expm import NotAGenerator, expm, matrix_exp, si_generator
from .logistic import LogisticISOracle, is_evidence_logistic, logistic_log_lik
