"""Training losses: L1 denoising plus wavelet, divergence and Sobel auxiliary terms.

All functions accept torch tensors shaped (..., C, H, W) or (C, H, W) and are
differentiable. Reduction conventions follow the definitions: the denoising
term is a mean over cells, the auxiliary terms are sums over coefficients
(their small lambda weights account for the scale difference).
"""

from __future__ import annotations

import torch

from .errors import DimensionError

SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.contiguous()


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_denoise_loss(x0_pred: torch.Tensor, x_hr: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over all cells and channels."""
    _check_same_shape(x0_pred, x_hr)
    return (x0_pred - x_hr).abs().mean()


def haar_dwt2(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """One level of the orthonormal 2-D Haar transform on the last two axes.

    Returns (LL, LH, HL, HH), each with halved spatial size. For the 2x2 block
    [[a, b], [c, d]] the coefficients are (a+b+c+d)/2, (a-b+c-d)/2,
    (a+b-c-d)/2 and (a-b-c+d)/2.
    """
    h, w = x.shape[-2], x.shape[-1]
    if h % 2 or w % 2:
        raise DimensionError(f"spatial dims must be even for the Haar transform, got {(h, w)}")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) / 2
    lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2
    hh = (a - b - c + d) / 2
    return ll, lh, hl, hh


def haar_idwt2(ll: torch.Tensor, lh: torch.Tensor, hl: torch.Tensor,
               hh: torch.Tensor) -> torch.Tensor:
    """Exact inverse of haar_dwt2."""
    a = (ll + lh + hl + hh) / 2
    b = (ll - lh + hl - hh) / 2
    c = (ll + lh - hl - hh) / 2
    d = (ll - lh - hl + hh) / 2
    out_shape = ll.shape[:-2] + (ll.shape[-2] * 2, ll.shape[-1] * 2)
    out = ll.new_zeros(out_shape)
    out[..., 0::2, 0::2] = a
    out[..., 0::2, 1::2] = b
    out[..., 1::2, 0::2] = c
    out[..., 1::2, 1::2] = d
    return out


def dwt_loss(x0_pred: torch.Tensor, x_hr: torch.Tensor) -> torch.Tensor:
    """Squared L2 distance of the detail coefficients of a 2-level Haar decomposition.

    The low-low component is discarded; levels 1 and 2 contribute their LH, HL
    and HH components, summed over all channels.
    """
    _check_same_shape(x0_pred, x_hr)
    h, w = x0_pred.shape[-2], x0_pred.shape[-1]
    if h % 4 or w % 4:
        raise DimensionError(f"spatial dims must be divisible by 4, got {(h, w)}")
    loss = x0_pred.new_zeros(())
    cur_p, cur_t = x0_pred, x_hr
    for _ in range(2):
        ll_p, *details_p = haar_dwt2(cur_p)
        ll_t, *details_t = haar_dwt2(cur_t)
        for dp, dt in zip(details_p, details_t):
            loss = loss + ((dp - dt) ** 2).sum()
        cur_p, cur_t = ll_p, ll_t
    return loss


def image_gradient(f: torch.Tensor, axis: int) -> torch.Tensor:
    """Discrete gradient: central differences inside, one-sided at the boundary."""
    f = f.movedim(axis, -1)
    interior = (f[..., 2:] - f[..., :-2]) / 2
    first = (f[..., 1:2] - f[..., 0:1])
    last = (f[..., -1:] - f[..., -2:-1])
    return torch.cat([first, interior, last], dim=-1).movedim(-1, axis)


def divergence(uv: torch.Tensor) -> torch.Tensor:
    """du/dx + dv/dy for a two-channel flow field (..., 2, H, W); x is the column axis."""
    if uv.shape[-3] != 2:
        raise DimensionError(f"flow field needs exactly 2 channels, got {uv.shape[-3]}")
    u = uv[..., 0, :, :]
    v = uv[..., 1, :, :]
    return image_gradient(u, axis=-1) + image_gradient(v, axis=-2)


def divergence_loss(pred_uv: torch.Tensor, true_uv: torch.Tensor) -> torch.Tensor:
    """Squared L2 distance between predicted and ground-truth flow divergence."""
    _check_same_shape(pred_uv, true_uv)
    return ((divergence(pred_uv) - divergence(true_uv)) ** 2).sum()


def sobel_filter(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Cross-correlate each channel with a 3x3 kernel under replicate padding."""
    lead = x.shape[:-2]
    flat = x.reshape(-1, 1, x.shape[-2], x.shape[-1])
    padded = torch.nn.functional.pad(flat, (1, 1, 1, 1), mode="replicate")
    k = kernel.to(dtype=x.dtype, device=x.device).reshape(1, 1, 3, 3)
    out = torch.nn.functional.conv2d(padded, k)
    return out.reshape(*lead, x.shape[-2], x.shape[-1])


def sobel_loss(x0_pred: torch.Tensor, x_hr: torch.Tensor) -> torch.Tensor:
    """L1 distance between Sobel responses of prediction and target, both directions."""
    _check_same_shape(x0_pred, x_hr)
    loss = x0_pred.new_zeros(())
    for kernel in (SOBEL_X, SOBEL_Y):
        loss = loss + (sobel_filter(x0_pred, kernel) - sobel_filter(x_hr, kernel)).abs().sum()
    return loss


def total_loss(
    x0_pred: torch.Tensor,
    x_hr: torch.Tensor,
    lam_dwt: float = 1e-3,
    lam_div: float = 1e-3,
    lam_sobel: float = 1e-3,
    uv_fn=None,
) -> torch.Tensor:
    """L1 + lam_dwt * DWT + lam_div * divergence + lam_sobel * Sobel.

    ``uv_fn`` maps a prediction-shaped tensor to its (u, v) flow components;
    the divergence term applies to those only, the other terms to all output
    channels. With ``uv_fn=None`` and nonzero lam_div the first two channels
    are used as the flow.
    """
    loss = l1_denoise_loss(x0_pred, x_hr)
    if lam_dwt:
        loss = loss + lam_dwt * dwt_loss(x0_pred, x_hr)
    if lam_div:
        if uv_fn is None:
            pred_uv, true_uv = x0_pred[..., 0:2, :, :], x_hr[..., 0:2, :, :]
        else:
            pred_uv, true_uv = uv_fn(x0_pred), uv_fn(x_hr)
        loss = loss + lam_div * divergence_loss(pred_uv, true_uv)
    if lam_sobel:
        loss = loss + lam_sobel * sobel_loss(x0_pred, x_hr)
    return loss
