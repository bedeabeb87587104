"""Full-reference image quality metrics: PSNR, SSIM, FSIM.

All three operate on 8-bit images (H, W) or (H, W, 3); color inputs are
reduced to luma (BT.601 weights) for SSIM and FSIM. FSIM follows the
published reference algorithm: phase congruency from a log-Gabor filter
bank (4 scales, 4 orientations, smallest wavelength 6, scaling factor 2,
sigma_onf 0.55), Scharr gradient magnitudes, and the phase-congruency
maximum as the pooling weight.
"""

from __future__ import annotations

import numpy as np

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2

FSIM_T1 = 0.85
FSIM_T2 = 160.0

_PC_SCALES = 4
_PC_ORIENTS = 4
_PC_MIN_WAVELENGTH = 6
_PC_MULT = 2.0
_PC_SIGMA_ONF = 0.55
_PC_DTHETA_ON_SIGMA = 1.2
_PC_K = 2.0
_PC_EPSILON = 1e-4

_SCHARR_X = np.array([[3, 0, -3], [10, 0, -10], [3, 0, -3]], dtype=np.float64) / 16.0
_SCHARR_Y = _SCHARR_X.T


def _check_pair(a, b, name):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
    return img


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB against a 255 peak; capped at 100."""
    a, b = _check_pair(a, b, "psnr")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(255.0**2 / mse)))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _filter_valid(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, kernel.shape)
    return np.einsum("hwij,ij->hw", win, kernel, optimize=True)


def ssim(a, b) -> float:
    """Mean local SSIM over valid 11x11 Gaussian windows on luma."""
    a, b = _check_pair(a, b, "ssim")
    x, y = luma(a), luma(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(
            f"ssim: image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    k = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _filter_valid(x, k)
    mu_y = _filter_valid(y, k)
    var_x = _filter_valid(x * x, k) - mu_x * mu_x
    var_y = _filter_valid(y * y, k) - mu_y * mu_y
    cov = _filter_valid(x * y, k) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


# -- FSIM ----------------------------------------------------------------------


def _correlate_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape
    pad = ((kh // 2, kh // 2), (kw // 2, kw // 2))
    xp = np.pad(x, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel.shape)
    return np.einsum("hwij,ij->hw", win, kernel, optimize=True)


def _normalized_meshgrid(rows: int, cols: int):
    if cols % 2:
        xr = np.arange(-(cols - 1) / 2, (cols - 1) / 2 + 1) / (cols - 1)
    else:
        xr = np.arange(-cols / 2, cols / 2) / cols
    if rows % 2:
        yr = np.arange(-(rows - 1) / 2, (rows - 1) / 2 + 1) / (rows - 1)
    else:
        yr = np.arange(-rows / 2, rows / 2) / rows
    return np.meshgrid(xr, yr)


def _lowpass_filter(rows: int, cols: int, cutoff: float = 0.45, order: int = 15):
    x, y = _normalized_meshgrid(rows, cols)
    radius = np.sqrt(x * x + y * y)
    return np.fft.ifftshift(1.0 / (1.0 + (radius / cutoff) ** (2 * order)))


def phase_congruency(img: np.ndarray) -> np.ndarray:
    """Kovesi-style phase congruency map from the log-Gabor bank."""
    rows, cols = img.shape
    imagefft = np.fft.fft2(img)

    x, y = _normalized_meshgrid(rows, cols)
    radius = np.fft.ifftshift(np.sqrt(x * x + y * y))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    radius[0, 0] = 1.0
    sintheta, costheta = np.sin(theta), np.cos(theta)
    lp = _lowpass_filter(rows, cols)

    log_gabor = []
    for s in range(_PC_SCALES):
        fo = 1.0 / (_PC_MIN_WAVELENGTH * _PC_MULT**s)
        lg = np.exp(-(np.log(radius / fo) ** 2) / (2.0 * np.log(_PC_SIGMA_ONF) ** 2))
        lg *= lp
        lg[0, 0] = 0.0
        log_gabor.append(lg)

    theta_sigma = np.pi / _PC_ORIENTS / _PC_DTHETA_ON_SIGMA
    spreads = []
    for o in range(_PC_ORIENTS):
        angl = o * np.pi / _PC_ORIENTS
        ds = sintheta * np.cos(angl) - costheta * np.sin(angl)
        dc = costheta * np.cos(angl) + sintheta * np.sin(angl)
        dtheta = np.abs(np.arctan2(ds, dc))
        spreads.append(np.exp(-(dtheta**2) / (2.0 * theta_sigma**2)))

    energy_all = np.zeros((rows, cols))
    an_all = np.zeros((rows, cols))
    for o in range(_PC_ORIENTS):
        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        eo_parts = []
        ifft_filters = []
        for s in range(_PC_SCALES):
            filt = log_gabor[s] * spreads[o]
            ifft_filters.append(np.real(np.fft.ifft2(filt)) * np.sqrt(rows * cols))
            eo = np.fft.ifft2(imagefft * filt)
            eo_parts.append(eo)
            sum_an += np.abs(eo)
            sum_e += np.real(eo)
            sum_o += np.imag(eo)
        x_energy = np.sqrt(sum_e**2 + sum_o**2) + _PC_EPSILON
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros((rows, cols))
        for eo in eo_parts:
            e, oim = np.real(eo), np.imag(eo)
            energy += e * mean_e + oim * mean_o - np.abs(e * mean_o - oim * mean_e)

        # noise threshold estimated from the smallest-scale response
        median_e2n = np.median(np.abs(eo_parts[0]) ** 2)
        em_n = np.sum(log_gabor[0] * spreads[o] * (log_gabor[0] * spreads[o]))
        noise_power = -(median_e2n / np.log(0.5)) / em_n
        est_sum_an2 = np.zeros((rows, cols))
        for f in ifft_filters:
            est_sum_an2 += f * f
        sum_est_sum_an2 = np.sum(est_sum_an2)
        sum_est_sum_aiaj = 0.0
        for si in range(_PC_SCALES - 1):
            for sj in range(si + 1, _PC_SCALES):
                sum_est_sum_aiaj += np.sum(ifft_filters[si] * ifft_filters[sj])
        est_noise_energy2 = (
            2 * noise_power * sum_est_sum_an2 + 4 * noise_power * sum_est_sum_aiaj
        )
        tau = np.sqrt(est_noise_energy2 / 2.0)
        est_noise_energy = tau * np.sqrt(np.pi / 2.0)
        est_noise_sigma = np.sqrt((2.0 - np.pi / 2.0) * tau**2)
        t = (est_noise_energy + _PC_K * est_noise_sigma) / 1.7
        energy_all += np.maximum(energy - t, 0.0)
        an_all += sum_an
    return energy_all / np.where(an_all == 0, 1.0, an_all)


def _fsim_downsample(x: np.ndarray) -> np.ndarray:
    f = max(1, int(round(min(x.shape) / 256.0)))
    if f == 1:
        return x
    h, w = (x.shape[0] // f) * f, (x.shape[1] // f) * f
    return x[:h, :w].reshape(h // f, f, w // f, f).mean(axis=(1, 3))


def fsim(a, b) -> float:
    """Feature similarity on luma: phase congruency weighted by PC maxima."""
    a, b = _check_pair(a, b, "fsim")
    if np.array_equal(a, b):
        return 1.0
    x = _fsim_downsample(luma(a))
    y = _fsim_downsample(luma(b))
    pc1 = phase_congruency(x)
    pc2 = phase_congruency(y)
    g1 = np.sqrt(_correlate_same(x, _SCHARR_X) ** 2 + _correlate_same(x, _SCHARR_Y) ** 2)
    g2 = np.sqrt(_correlate_same(y, _SCHARR_X) ** 2 + _correlate_same(y, _SCHARR_Y) ** 2)
    s_pc = (2 * pc1 * pc2 + FSIM_T1) / (pc1**2 + pc2**2 + FSIM_T1)
    s_g = (2 * g1 * g2 + FSIM_T2) / (g1**2 + g2**2 + FSIM_T2)
    pcm = np.maximum(pc1, pc2)
    denom = float(np.sum(pcm))
    if denom == 0.0:
        return 0.0
    return float(np.sum(s_pc * s_g * pcm) / denom)
