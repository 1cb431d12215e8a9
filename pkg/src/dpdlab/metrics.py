import numpy as np


def evm(u, u_hat) -> float:
    """``20 log10(||u - u_hat|| / ||u||)`` in dB; ``-inf`` when the frames agree exactly."""
    u = np.asarray(getattr(u, "samples", u))
    u_hat = np.asarray(getattr(u_hat, "samples", u_hat))
    if u.shape != u_hat.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {u_hat.shape}")
    ref = np.linalg.norm(u)
    if ref == 0:
        raise ValueError("EVM reference frame is zero")
    err = np.linalg.norm(u - u_hat)
    if err == 0:
        return float("-inf")
    return float(20 * np.log10(err / ref))
