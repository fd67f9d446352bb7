"""Shared test fixtures and independent oracles.

The oracles here deliberately avoid the library's own geometry: area
fractions and IoU come from pixel-center membership tests (matplotlib
Path), histograms from per-pixel loops, gradients from central finite
differences evaluated in float64.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from matplotlib.path import Path as MplPath

from histodense.geometry import bounding_box
from histodense.nn import gradcheck, ops

# ---------------------------------------------------------------------------
# polygon generation and rasterization oracles


def random_star_polygon(rng: np.random.Generator, cx: float, cy: float,
                        r_max: float, n_vertices: int = 8) -> tuple:
    """Random simple polygon with integer vertices, star-shaped about its
    center so the vertex ordering cannot self-intersect."""
    from shapely.geometry import Polygon as ShapelyPolygon

    while True:
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=n_vertices))
        if np.min(np.diff(angles)) < 0.05:
            continue
        radii = rng.uniform(0.35 * r_max, r_max, size=n_vertices)
        pts = []
        for a, r in zip(angles, radii):
            x = int(round(cx + r * math.cos(a)))
            y = int(round(cy + r * math.sin(a)))
            if x < 0 or y < 0:
                break
            if pts and (x, y) == pts[-1]:
                continue
            pts.append((x, y))
        else:
            if len(pts) >= 3 and pts[0] != pts[-1]:
                shape = ShapelyPolygon(pts)
                if shape.is_valid and shape.area > 4.0:
                    return tuple((float(x), float(y)) for x, y in pts)


def pixel_membership(polygon, x0: float, y0: float, width: int,
                     height: int) -> np.ndarray:
    """Boolean mask of pixels whose centers fall inside the polygon,
    over the integer grid anchored at (x0, y0)."""
    xs = x0 + np.arange(width) + 0.5
    ys = y0 + np.arange(height) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    mask = MplPath(polygon).contains_points(points)
    return mask.reshape(height, width)


def raster_cell_fractions(polygon, patch_side: int) -> dict[tuple[int, int], float]:
    """Per-grid-cell area fractions by counting member pixel centers."""
    x0, y0, x1, y1 = bounding_box(polygon)
    nx = max(1, math.ceil((x1 - x0) / patch_side))
    ny = max(1, math.ceil((y1 - y0) / patch_side))
    mask = pixel_membership(polygon, x0, y0, nx * patch_side, ny * patch_side)
    fractions = {}
    for row in range(ny):
        for col in range(nx):
            cell = mask[row * patch_side:(row + 1) * patch_side,
                        col * patch_side:(col + 1) * patch_side]
            fractions[(int(x0 + col * patch_side), int(y0 + row * patch_side))] = (
                float(cell.mean()))
    return fractions


def raster_iou(poly_a, poly_b) -> float:
    ax0, ay0, ax1, ay1 = bounding_box(poly_a)
    bx0, by0, bx1, by1 = bounding_box(poly_b)
    x0, y0 = math.floor(min(ax0, bx0)), math.floor(min(ay0, by0))
    x1, y1 = math.ceil(max(ax1, bx1)), math.ceil(max(ay1, by1))
    w, h = int(x1 - x0), int(y1 - y0)
    in_a = pixel_membership(poly_a, x0, y0, w, h)
    in_b = pixel_membership(poly_b, x0, y0, w, h)
    union = np.logical_or(in_a, in_b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(in_a, in_b).sum() / union)


# ---------------------------------------------------------------------------
# per-pixel histogram oracle


def brute_force_grey_hist(pixels: np.ndarray) -> np.ndarray:
    counts = np.zeros(16, dtype=np.int64)
    for row in pixels.reshape(-1, 3):
        r, g, b = (int(v) for v in row)
        grey = int(math.floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5))
        grey = min(grey, 255)
        counts[grey // 16] += 1
    return counts


def brute_force_white_keep(pixels: np.ndarray, threshold: float = 0.10) -> bool:
    """Direct per-pixel rule: discard iff strictly more than threshold of
    pixels have grey level >= 240."""
    white = 0
    flat = pixels.reshape(-1, 3)
    for row in flat:
        r, g, b = (int(v) for v in row)
        grey = min(int(math.floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5)), 255)
        if grey >= 240:
            white += 1
    return not (white > threshold * len(flat))


# ---------------------------------------------------------------------------
# class textures and synthetic slides


def class_texture(class_index: int, rng: np.random.Generator,
                  side: int = 64) -> np.ndarray:
    """Strongly distinct per-class textures; no pixel reaches the white
    bin (all channels stay below 210)."""
    img = np.zeros((side, side, 3), dtype=np.uint8)
    noise = rng.integers(0, 20, size=(side, side, 3), dtype=np.int64)
    if class_index == 0:  # horizontal stripes
        for y in range(side):
            color = (190, 120, 140) if (y // 8) % 2 == 0 else (90, 40, 60)
            img[y, :] = color
    elif class_index == 1:  # dot lattice
        img[:, :] = (170, 150, 180)
        for cy in range(4, side, 12):
            for cx in range(4, side, 12):
                img[max(0, cy - 3):cy + 3, max(0, cx - 3):cx + 3] = (60, 30, 90)
    else:  # dark uniform noise
        img[:, :] = (70, 80, 50)
        noise = rng.integers(0, 60, size=(side, side, 3), dtype=np.int64)
    return np.clip(img.astype(np.int64) + noise, 0, 209).astype(np.uint8)


def texture_dataset(rng: np.random.Generator, per_class: int = 60,
                    side: int = 64):
    """(images, labels) for the 3-class overfit harness."""
    images, labels = [], []
    for cls in range(3):
        for _ in range(per_class):
            images.append(class_texture(cls, rng, side))
            labels.append(cls)
    return images, np.array(labels, dtype=np.int64)


STRIP_HEIGHT = 384
STRIP_TOPS = (0, 424, 848)
WSI_SIDE = 1280


def build_slide_pixels(rng: np.random.Generator, white_block=None) -> np.ndarray:
    """1280x1280 slide with one horizontal strip per class (Normal, NPI,
    NPC top to bottom). white_block=(x, y) paints a 256x256 white square."""
    pixels = np.full((WSI_SIDE, WSI_SIDE, 3), 230, dtype=np.uint8)
    for cls, top in enumerate(STRIP_TOPS):
        tile = class_texture(cls, rng, side=128)
        reps = (math.ceil(STRIP_HEIGHT / 128), math.ceil(WSI_SIDE / 128), 1)
        strip = np.tile(tile, reps)[:STRIP_HEIGHT, :WSI_SIDE]
        pixels[top:top + STRIP_HEIGHT] = strip
    if white_block is not None:
        x, y = white_block
        pixels[y:y + 256, x:x + 256] = 255
    return pixels


def rect_polygon(x0: int, y0: int, w: int, h: int) -> list[list[int]]:
    return [[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h]]


def build_pipeline_fixture(root: Path, wsi_ids=("wsi_a", "wsi_b", "wsi_c"),
                           seed: int = 7, white_block_on=None) -> dict:
    """Write slides + annotations under root; returns the paths section.

    Each slide carries one rectangular annotation per class strip, single
    annotator, 20x. white_block_on names a wsi that gets an all-white
    256px square at the start of its Normal strip.
    """
    root = Path(root)
    images = root / "images"
    images.mkdir(parents=True, exist_ok=True)
    from histodense.imageio import save_png

    rng = np.random.default_rng(seed)
    documents = []
    for wsi_id in wsi_ids:
        white = (0, 0) if wsi_id == white_block_on else None
        save_png(build_slide_pixels(rng, white_block=white),
                 images / f"{wsi_id}.png")
        documents.append({
            "wsi_id": wsi_id,
            "magnification": 20,
            "annotations": [
                {"annotator": "a1", "class": cls,
                 "polygon": rect_polygon(0, top, WSI_SIDE, STRIP_HEIGHT)}
                for cls, top in zip(("Normal", "NPI", "NPC"), STRIP_TOPS)
            ],
        })
    ann_path = root / "annotations.json"
    ann_path.write_text(json.dumps(documents, indent=1), encoding="utf-8")
    return {
        "annotations": str(ann_path),
        "images": str(images),
        "output": str(root / "out"),
    }


# ---------------------------------------------------------------------------
# gradient-check harnesses (shared by unit and acceptance tests)


def _projection_loss(forward, proj):
    """Scalar function sum(forward(x) * proj) plus its upstream gradient."""
    def f(x):
        return float((forward(x)[0] * proj).sum())
    return f


def run_layer_gradchecks(seed: int) -> dict[str, float]:
    """Finite-difference check of every layer op; returns max relative
    error per case. Inputs are conditioned away from ReLU/max-pool kinks
    so the h=1e-3 stencil stays on one smooth branch."""
    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}

    def check(name, forward_fn, backward_fn, x, h=1e-3):
        y, cache = forward_fn(x)
        proj = rng.normal(size=y.shape).astype(np.float32)
        analytic = backward_fn(proj, cache)
        f = _projection_loss(lambda v: forward_fn(v), proj)
        numeric = gradcheck.numeric_gradient(f, x, h=h)
        errors[name] = gradcheck.max_rel_error(analytic, numeric)

    # conv2d: gradients wrt input and weights
    x = rng.normal(size=(2, 3, 6, 6)).astype(np.float32)
    w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    check("conv2d.x",
          lambda v: ops.conv2d_forward(v, w, stride=2, padding=1),
          lambda dy, cache: ops.conv2d_backward(dy, cache)[0], x)
    check("conv2d.w",
          lambda v: ops.conv2d_forward(x, v, stride=2, padding=1),
          lambda dy, cache: ops.conv2d_backward(dy, cache)[1], w)

    # batchnorm (train mode): x, gamma, beta
    xb = rng.normal(size=(3, 4, 5, 5)).astype(np.float32)
    gamma = rng.uniform(0.5, 1.5, size=4).astype(np.float32)
    beta = rng.normal(size=4).astype(np.float32)

    def bn_forward(xv, gv, bv):
        rm = np.zeros(4, dtype=np.float32)
        rv = np.ones(4, dtype=np.float32)
        y, cache, _ = ops.batchnorm2d_forward(xv, gv, bv, rm, rv, train=True)
        return y, cache

    check("batchnorm.x", lambda v: bn_forward(v, gamma, beta),
          lambda dy, cache: ops.batchnorm2d_backward(dy, cache)[0], xb)
    check("batchnorm.gamma", lambda v: bn_forward(xb, v, beta),
          lambda dy, cache: ops.batchnorm2d_backward(dy, cache)[1], gamma)
    check("batchnorm.beta", lambda v: bn_forward(xb, gamma, v),
          lambda dy, cache: ops.batchnorm2d_backward(dy, cache)[2], beta)

    # relu: push values away from the kink at 0
    xr = rng.normal(size=(2, 3, 4, 4)).astype(np.float32)
    xr = np.where(np.abs(xr) < 0.05, 0.1, xr).astype(np.float32)
    check("relu", lambda v: ops.relu_forward(v),
          lambda dy, mask: ops.relu_backward(dy, mask), xr)

    # maxpool: distinct values so h=1e-3 cannot flip the argmax
    base = rng.permutation(2 * 2 * 6 * 6).astype(np.float32) * 0.01
    xm = base.reshape(2, 2, 6, 6)
    check("maxpool", lambda v: ops.maxpool2d_forward(v, 3, 2, 1),
          lambda dy, cache: ops.maxpool2d_backward(dy, cache), xm)

    xa = rng.normal(size=(2, 3, 4, 4)).astype(np.float32)
    check("avgpool", lambda v: ops.avgpool2x2_forward(v),
          lambda dy, shape: ops.avgpool2x2_backward(dy, shape), xa)
    check("global_avgpool", lambda v: ops.global_avgpool_forward(v),
          lambda dy, shape: ops.global_avgpool_backward(dy, shape), xa)

    # linear: x, w, b
    xl = rng.normal(size=(4, 6)).astype(np.float32)
    wl = rng.normal(size=(3, 6)).astype(np.float32)
    bl = rng.normal(size=3).astype(np.float32)
    check("linear.x", lambda v: ops.linear_forward(v, wl, bl),
          lambda dy, cache: ops.linear_backward(dy, cache)[0], xl)
    check("linear.w", lambda v: ops.linear_forward(xl, v, bl),
          lambda dy, cache: ops.linear_backward(dy, cache)[1], wl)
    check("linear.b", lambda v: ops.linear_forward(xl, wl, v),
          lambda dy, cache: ops.linear_backward(dy, cache)[2], bl)

    # softmax cross-entropy: loss gradient directly
    logits = rng.normal(size=(5, 3)).astype(np.float32)
    labels = rng.integers(0, 3, size=5)
    _, dlogits, _ = ops.softmax_cross_entropy(logits, labels)
    numeric = gradcheck.numeric_gradient(
        lambda v: float(ops.softmax_cross_entropy(v, labels)[0]), logits, h=1e-3)
    errors["softmax_xent"] = gradcheck.max_rel_error(dlogits, numeric)
    return errors


def run_tiny_densenet_gradcheck(seed: int, coords_per_param: int = 2,
                                input_size: int = 32):
    """End-to-end check: analytic parameter gradients of the tiny network
    vs float64 central differences at sampled coordinates.

    The loss is piecewise smooth; a finite difference is only a derivative
    when both stencil points sit on the same smooth piece. Every numeric
    evaluation therefore records the activation branch pattern (relu masks,
    pool argmaxes); when perturbing a coordinate flips any branch, the step
    shrinks, and the coordinate is skipped only if the smallest step still
    crosses. The filter never looks at the analytic gradient, so it cannot
    hide a backward bug. Relative error is floored at 1% of the largest
    gradient magnitude: below that, float32 arithmetic cannot resolve the
    value and the comparison is held to an absolute bar instead.

    Returns (max relative error, coords checked, coords skipped).
    """
    from histodense.densenet import build_tiny
    from histodense.nn.layers import MaxPool2d, ReLU
    from histodense.nn.ops import softmax_cross_entropy

    steps = (1e-6, 1.25e-7)
    # The sample point must itself be branch-unambiguous: the float32 and
    # float64 forwards have to agree on every activation branch, otherwise
    # the two sides differentiate different linear pieces. Reseed if not.
    for attempt in range(5):
        shifted = seed + 100_000 * attempt
        rng = np.random.default_rng(shifted)
        model = build_tiny(growth_rate=4, input_size=input_size, seed=shifted)
        x = rng.normal(0.0, 1.0, size=(2, 3, input_size, input_size)).astype(np.float32)
        y = rng.integers(0, 3, size=2)
        branchy = [m for m in model._modules() if isinstance(m, (ReLU, MaxPool2d))]

        def snapshot():
            return [m._mask.copy() if isinstance(m, ReLU) else m._cache[0].copy()
                    for m in branchy]

        model.zero_grad()
        logits = model.forward(x, train=True)
        _, dlogits, _ = softmax_cross_entropy(logits, y)
        model.backward(dlogits)
        sig32 = snapshot()

        x64 = x.astype(np.float64)

        def loss64():
            out = model.forward(x64, train=True)
            return float(softmax_cross_entropy(out, y)[0])

        loss64()
        base_sig = snapshot()
        if all(np.array_equal(a, b) for a, b in zip(sig32, base_sig)):
            break
    else:
        raise AssertionError("no branch-stable sample point found in 5 reseeds")

    def matches_base():
        for m, ref in zip(branchy, base_sig):
            cur = m._mask if isinstance(m, ReLU) else m._cache[0]
            if not np.array_equal(cur, ref):
                return False
        return True

    gmax = max(float(np.abs(p.grad).max()) for p in model.parameters())
    floor = 1e-2 * gmax
    worst, checked, skipped = 0.0, 0, 0
    for param in model.parameters():
        coords = gradcheck.sample_coords(param.value.shape, coords_per_param, rng)
        orig = param.value
        pert = orig.astype(np.float64)
        param.value = pert
        for idx in coords:
            saved = pert[idx]
            numeric = None
            for h in steps:
                values, clean = [], True
                for sign in (h, -h):
                    pert[idx] = saved + sign
                    values.append(loss64())
                    if not matches_base():
                        clean = False
                        break
                pert[idx] = saved
                if clean:
                    numeric = (values[0] - values[1]) / (2.0 * h)
                    break
            if numeric is None:
                skipped += 1
                continue
            err = gradcheck.rel_error_at(float(param.grad[idx]), numeric, floor)
            worst = max(worst, err)
            checked += 1
        param.value = orig
    if skipped > 0.2 * (checked + skipped):
        raise AssertionError(
            f"{skipped} of {checked + skipped} coordinates crossed activation "
            "branches; step size too large for this sample"
        )
    return worst, checked, skipped
