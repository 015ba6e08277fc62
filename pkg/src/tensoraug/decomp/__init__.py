"""Low-rank decomposition engines: Tucker, CP and Tensor-Train."""

from .cp import CPFactors, cp_als, cp_reconstruct, cp_to_tucker
from .tt import TTFactors, tt_element, tt_reconstruct, tt_svd
from .tucker import TuckerFactors, hooi, hosvd, tucker_fit, tucker_reconstruct


def reconstruct(f):
    if isinstance(f, TuckerFactors):
        return tucker_reconstruct(f)
    if isinstance(f, CPFactors):
        return cp_reconstruct(f)
    if isinstance(f, TTFactors):
        return tt_reconstruct(f)
    raise TypeError(f"not a factor bundle: {type(f).__name__}")


__all__ = [
    "CPFactors", "TTFactors", "TuckerFactors", "cp_als", "cp_reconstruct", "cp_to_tucker",
    "hooi", "hosvd", "reconstruct", "tt_element", "tt_reconstruct", "tt_svd", "tucker_fit",
    "tucker_reconstruct",
]
