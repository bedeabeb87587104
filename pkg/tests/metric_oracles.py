"""Independent reference implementations used only to cross-check atvc.metrics.

fsim_oracle is a literal, loop-structured transcription of the published
FSIM reference algorithm (luma path), kept deliberately separate from the
library's vectorized version. ssim_oracle evaluates the windowed formula
per window position with explicit loops. Nothing here imports atvc.
"""

import math

import numpy as np


def psnr_oracle(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return 100.0
    return 10.0 * math.log10(255.0 * 255.0 / mse)


def _to_luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]
    return img


def ssim_oracle(a, b, window=11, sigma=1.5):
    x = _to_luma(a)
    y = _to_luma(b)
    half = (window - 1) / 2.0
    kernel = np.empty((window, window))
    for i in range(window):
        for j in range(window):
            kernel[i, j] = math.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sigma**2))
    kernel /= kernel.sum()
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    h, w = x.shape
    vals = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            wx = x[i : i + window, j : j + window]
            wy = y[i : i + window, j : j + window]
            mx = float((kernel * wx).sum())
            my = float((kernel * wy).sum())
            vx = float((kernel * wx * wx).sum()) - mx * mx
            vy = float((kernel * wy * wy).sum()) - my * my
            cxy = float((kernel * wx * wy).sum()) - mx * my
            vals.append(
                ((2 * mx * my + c1) * (2 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2))
            )
    return float(np.mean(vals))


def _phasecong2_literal(im):
    """Transcription of the phase-congruency routine used by the FSIM reference."""
    nscale = 4
    norient = 4
    min_wave_length = 6
    mult = 2.0
    sigma_onf = 0.55
    d_theta_on_sigma = 1.2
    k = 2.0
    epsilon = 1e-4

    rows, cols = im.shape
    imagefft = np.fft.fft2(im)

    if cols % 2:
        xrange = np.arange(-(cols - 1) / 2, (cols - 1) / 2 + 1) / (cols - 1)
    else:
        xrange = np.arange(-cols / 2, cols / 2) / cols
    if rows % 2:
        yrange = np.arange(-(rows - 1) / 2, (rows - 1) / 2 + 1) / (rows - 1)
    else:
        yrange = np.arange(-rows / 2, rows / 2) / rows
    x, y = np.meshgrid(xrange, yrange)
    radius = np.fft.ifftshift(np.sqrt(x**2 + y**2))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    radius[0, 0] = 1.0
    sintheta = np.sin(theta)
    costheta = np.cos(theta)

    # low-pass: raised butterworth, cutoff .45, order 15
    lp_radius = np.fft.ifftshift(np.sqrt(x**2 + y**2))
    lp = 1.0 / (1.0 + (lp_radius / 0.45) ** 30)

    log_gabor = []
    for s in range(nscale):
        wavelength = min_wave_length * mult**s
        fo = 1.0 / wavelength
        lg = np.exp(-((np.log(radius / fo)) ** 2) / (2 * np.log(sigma_onf) ** 2))
        lg = lg * lp
        lg[0, 0] = 0
        log_gabor.append(lg)

    theta_sigma = np.pi / norient / d_theta_on_sigma
    energy_all = np.zeros((rows, cols))
    an_all = np.zeros((rows, cols))

    for o in range(norient):
        angl = o * np.pi / norient
        ds = sintheta * np.cos(angl) - costheta * np.sin(angl)
        dc = costheta * np.cos(angl) + sintheta * np.sin(angl)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-(dtheta**2) / (2 * theta_sigma**2))

        sum_e_this_orient = np.zeros((rows, cols))
        sum_o_this_orient = np.zeros((rows, cols))
        sum_an_this_orient = np.zeros((rows, cols))
        eo_scale = []
        ifft_filt_array = []
        em_n = 0.0
        for s in range(nscale):
            filt = log_gabor[s] * spread
            ifft_filt = np.real(np.fft.ifft2(filt)) * math.sqrt(rows * cols)
            ifft_filt_array.append(ifft_filt)
            eo = np.fft.ifft2(imagefft * filt)
            eo_scale.append(eo)
            an = np.abs(eo)
            sum_an_this_orient = sum_an_this_orient + an
            sum_e_this_orient = sum_e_this_orient + np.real(eo)
            sum_o_this_orient = sum_o_this_orient + np.imag(eo)
            if s == 0:
                em_n = float(np.sum(filt**2))

        x_energy = np.sqrt(sum_e_this_orient**2 + sum_o_this_orient**2) + epsilon
        mean_e = sum_e_this_orient / x_energy
        mean_o = sum_o_this_orient / x_energy
        energy = np.zeros((rows, cols))
        for s in range(nscale):
            e = np.real(eo_scale[s])
            oo = np.imag(eo_scale[s])
            energy = energy + e * mean_e + oo * mean_o - np.abs(e * mean_o - oo * mean_e)

        median_e2n = float(np.median(np.abs(eo_scale[0]) ** 2))
        noise_power = -(median_e2n / math.log(0.5)) / em_n

        est_sum_an2 = np.zeros((rows, cols))
        for s in range(nscale):
            est_sum_an2 = est_sum_an2 + ifft_filt_array[s] ** 2
        est_sum_aiaj = np.zeros((rows, cols))
        for si in range(nscale - 1):
            for sj in range(si + 1, nscale):
                est_sum_aiaj = est_sum_aiaj + ifft_filt_array[si] * ifft_filt_array[sj]
        est_noise_energy2 = 2 * noise_power * float(np.sum(est_sum_an2)) + 4 * noise_power * float(np.sum(est_sum_aiaj))
        tau = math.sqrt(est_noise_energy2 / 2)
        est_noise_energy = tau * math.sqrt(math.pi / 2)
        est_noise_energy_sigma = math.sqrt((2 - math.pi / 2) * tau**2)
        t = (est_noise_energy + k * est_noise_energy_sigma) / 1.7

        energy = np.maximum(energy - t, 0)
        energy_all = energy_all + energy
        an_all = an_all + sum_an_this_orient

    return energy_all / an_all


def _gradient_magnitude_literal(im):
    dx = np.array([[3, 0, -3], [10, 0, -10], [3, 0, -3]], dtype=np.float64) / 16.0
    dy = dx.T
    rows, cols = im.shape
    padded = np.zeros((rows + 2, cols + 2))
    padded[1:-1, 1:-1] = im
    gx = np.zeros((rows, cols))
    gy = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            win = padded[i : i + 3, j : j + 3]
            gx[i, j] = float((win * dx).sum())
            gy[i, j] = float((win * dy).sum())
    return np.sqrt(gx**2 + gy**2)


def fsim_oracle(a, b):
    t1 = 0.85
    t2 = 160.0
    y1 = _to_luma(a)
    y2 = _to_luma(b)
    f = max(1, round(min(y1.shape) / 256.0))
    if f > 1:
        h = (y1.shape[0] // f) * f
        w = (y1.shape[1] // f) * f
        y1 = y1[:h, :w].reshape(h // f, f, w // f, f).mean(axis=(1, 3))
        y2 = y2[:h, :w].reshape(h // f, f, w // f, f).mean(axis=(1, 3))
    pc1 = _phasecong2_literal(y1)
    pc2 = _phasecong2_literal(y2)
    g1 = _gradient_magnitude_literal(y1)
    g2 = _gradient_magnitude_literal(y2)
    pc_sim = (2 * pc1 * pc2 + t1) / (pc1**2 + pc2**2 + t1)
    g_sim = (2 * g1 * g2 + t2) / (g1**2 + g2**2 + t2)
    pcm = np.maximum(pc1, pc2)
    sim_matrix = g_sim * pc_sim * pcm
    return float(np.sum(sim_matrix) / np.sum(pcm))
