"""Independent oracles shared by the test modules."""
import itertools
import struct
from collections import deque

import numpy as np

from e1d3 import layers
from e1d3.network import forward


# --------------------------------------------------------------------------
# direct-summation convolution


def conv3_direct(x, w, b, stride):
    """Literal loop over output voxels of a "same"-padded convolution."""
    n, c, d, h, wd = x.shape
    o, _, k, _, _ = w.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    od, oh, ow = [(s + 2 * p - k) // stride + 1 for s in (d, h, wd)]
    y = np.zeros((n, o, od, oh, ow))
    for i, j, m in itertools.product(range(od), range(oh), range(ow)):
        patch = xp[:, :, i * stride : i * stride + k, j * stride : j * stride + k, m * stride : m * stride + k]
        y[:, :, i, j, m] = np.tensordot(patch, w, axes=([1, 2, 3, 4], [1, 2, 3, 4]))
    return y + b[None, :, None, None, None]


def convT_direct(x, w, b, stride):
    """Scatter every input voxel through the kernel."""
    n, c, d, h, wd = x.shape
    _, o, k, _, _ = w.shape
    y = np.zeros((n, o) + tuple((s - 1) * stride + k for s in (d, h, wd)))
    for i, j, m in itertools.product(range(d), range(h), range(wd)):
        contrib = np.tensordot(x[:, :, i, j, m], w, axes=([1], [0]))
        y[:, :, i * stride : i * stride + k, j * stride : j * stride + k, m * stride : m * stride + k] += contrib
    return y + b[None, :, None, None, None]


# --------------------------------------------------------------------------
# finite-difference replay over the network graph


def graph_nodes(spec):
    """(name, kind, stride, inputs) in execution order."""
    L = spec.levels
    nodes = []
    prev = "input"
    for lvl in range(1, L + 1):
        nodes.append((f"enc{lvl}.conv1", "conv", 1 if lvl == 1 else 2, (prev,)))
        nodes.append((f"enc{lvl}.conv2", "conv", 1, (f"enc{lvl}.conv1",)))
        prev = f"enc{lvl}.conv2"
    for dec in spec.decoder_names:
        below = f"enc{L}.conv2"
        for lvl in range(L - 1, 0, -1):
            nodes.append((f"{dec}.up{lvl}", "convT", 2, (below,)))
            nodes.append((f"{dec}.conv{lvl}a", "conv", 1, (f"enc{lvl}.conv2", f"{dec}.up{lvl}")))
            nodes.append((f"{dec}.conv{lvl}b", "conv", 1, (f"{dec}.conv{lvl}a",)))
            below = f"{dec}.conv{lvl}b"
        nodes.append((f"{dec}.head", "head", 1, (below,)))
    return nodes


class GraphReplay:
    """Central finite differences of the combined loss, one parameter at a time, in batches.

    A parameter change moves its own layer's pre-activation by an exact,
    linear amount. Holding the LeakyReLU pattern of the base point, the map
    from there to the head logits is linear too, so one batched pass of
    that perturbation gives the logits at both stencil points. Wherever no
    pre-activation changes sign inside the stencil this is exactly the
    ordinary central difference; where one does (a kink inside the
    stencil), the value is the central difference along the base point's
    linear piece, which is the quantity backpropagation computes.
    """

    def __init__(self, state, spec, x, labels, eps=1e-5):
        if spec.variant != "E1D3":
            raise NotImplementedError("replay oracle is written for binary heads")
        self.state, self.spec, self.eps = state, spec, eps
        self.nodes = graph_nodes(spec)
        self.order = [n[0] for n in self.nodes]
        self.by_name = {n[0]: n for n in self.nodes}
        self.slope = spec.negative_slope
        lab = labels[:, 0]
        self.targets = {
            "wt": np.isin(lab, (1, 2, 4)).astype(float),
            "tc": np.isin(lab, (1, 4)).astype(float),
            "en": (lab == 4).astype(float),
        }
        self.pre, self.out = {}, {"input": x}
        for name, kind, stride, inputs in self.nodes:
            inp = self._gather(inputs, self.out)
            w, b = self.state.params[f"{name}.w"], self.state.params[f"{name}.b"]
            if kind == "convT":
                self.pre[name] = layers.convtranspose3_forward(inp, w, b, stride)[0]
            else:
                self.pre[name] = layers.conv3_forward(inp, w, b, stride)[0]
            if kind == "conv":
                self.out[name] = np.where(self.pre[name] > 0, self.pre[name], self.slope * self.pre[name])
            elif kind == "head":
                self.out[name] = layers.softmax_channels(self.pre[name])
            else:
                self.out[name] = self.pre[name]
        self.gain = {
            n: np.where(self.pre[n] >= 0, 1.0, self.slope) for n, kind, _, _ in self.nodes if kind == "conv"
        }
        self.base_head = {d: self.head_loss(d, self.out[f"{d}.head"])[0] for d in spec.decoder_names}

    def head_loss(self, dec, p):
        tgt = self.targets[dec]
        axes = (1, 2, 3)
        fg = p[:, 1]
        dice = 1.0 - (2.0 * (fg * tgt).sum(axis=axes) + self.eps) / (
            fg.sum(axis=axes) + tgt.sum(axis=axes) + self.eps
        )
        picked = np.where(tgt > 0, p[:, 1], p[:, 0])
        ce = -np.log(np.maximum(picked, 1e-12)).mean(axis=axes)
        return dice + ce

    @staticmethod
    def _gather(inputs, vals):
        arrs = [vals[i] for i in inputs]
        return arrs[0] if len(arrs) == 1 else np.concatenate(arrs, axis=1)

    def _linear_delta(self, name, kind, stride, inputs, deltas):
        """Pre-activation change of ``name`` from input changes (no bias)."""
        w = self.state.params[f"{name}.w"]
        zero_b = np.zeros(w.shape[1] if kind == "convT" else w.shape[0])
        if kind == "convT":
            return layers.convtranspose3_forward(deltas[inputs[0]], w, zero_b, stride)[0]
        if len(inputs) == 1:
            return layers.conv3_forward(deltas[inputs[0]], w, zero_b, stride)[0]
        # concatenated input: only the dirty halves contribute
        split = self.out[inputs[0]].shape[1]
        total = None
        for part, sl in ((inputs[0], slice(0, split)), (inputs[1], slice(split, None))):
            if part in deltas:
                y = layers.conv3_forward(deltas[part], np.ascontiguousarray(w[:, sl]), zero_b, stride)[0]
                total = y if total is None else total + y
        return total

    def stencil_losses(self, layer, dpre, step):
        """Loss at ``base +/- step * dpre`` for a batch of pre-activation directions of ``layer``.

        Returns ``(loss_plus, loss_minus, kink)``.
        """
        nb = dpre.shape[0]
        kink = np.zeros(nb, dtype=bool)
        deltas = {}
        for nm, kind, stride, inputs in self.nodes[self.order.index(layer):]:
            if nm == layer:
                d = dpre
            elif any(i in deltas for i in inputs):
                d = self._linear_delta(nm, kind, stride, inputs, deltas)
            else:
                continue
            if kind == "conv":
                z0 = self.pre[nm] >= 0
                for sgn in (1.0, -1.0):
                    flip = (self.pre[nm] + sgn * step * d >= 0) != z0
                    kink |= flip.reshape(nb, -1).any(axis=1)
                d = d * self.gain[nm]
            deltas[nm] = d
        lp, lm = np.zeros(nb), np.zeros(nb)
        for dec in self.spec.decoder_names:
            head = f"{dec}.head"
            if head in deltas:
                lp += self.head_loss(dec, layers.softmax_channels(self.pre[head] + step * deltas[head]))
                lm += self.head_loss(dec, layers.softmax_channels(self.pre[head] - step * deltas[head]))
            else:
                lp += self.base_head[dec]
                lm += self.base_head[dec]
        m = len(self.spec.decoder_names)
        return lp / m, lm / m, kink

    def contribution(self, layer, param, index):
        """Exact change of ``layer``'s pre-activation per unit change of one parameter."""
        name, kind, stride, inputs = self.by_name[layer]
        pre = self.pre[layer]
        delta = np.zeros(pre.shape[1:])
        if param == "b":
            delta[index[0]] = 1.0
            return delta
        inp = self._gather(inputs, self.out)[0]
        if kind == "convT":
            c, o, i, j, m = index
            delta[o, i::stride, j::stride, m::stride] = inp[c]
            return delta
        o, c, i, j, m = index
        k = self.state.params[f"{layer}.w"].shape[2]
        p = (k - 1) // 2
        xp = np.pad(inp[c], p)
        d, h, w = pre.shape[2:]
        delta[o] = xp[i : i + stride * (d - 1) + 1 : stride, j : j + stride * (h - 1) + 1 : stride,
                      m : m + stride * (w - 1) + 1 : stride]
        return delta

    def fd_gradient(self, key, step=1e-4, chunk=64):
        """Central differences for every entry of parameter ``key``; returns ``(grad, kink)``."""
        layer, param = key.rsplit(".", 1)
        shape = self.state.params[key].shape
        grad = np.zeros(shape)
        kink = np.zeros(shape, dtype=bool)
        indices = list(np.ndindex(shape))
        for s in range(0, len(indices), chunk):
            part = indices[s : s + chunk]
            dpre = np.stack([self.contribution(layer, param, ix) for ix in part])
            lp, lm, kk = self.stencil_losses(layer, dpre, step)
            g = (lp - lm) / (2 * step)
            for ix, val, k in zip(part, g, kk):
                grad[ix] = val
                kink[ix] = k
        return grad, kink


def analytic_gradients(state, spec, x, labels, eps=1e-5):
    from e1d3.losses import combined_loss
    from e1d3.network import backward

    state.zero_grad()
    trace = forward(state, spec, x)
    report, grads = combined_loss(trace, labels, spec.variant, eps)
    backward(trace, state, spec, grads)
    return report, {k: v.copy() for k, v in state.grads.items()}


def grad_mismatch(analytic, numeric, rel=1e-4, floor=1e-8):
    """Entries failing ``|a - n| <= max(rel * max(|a|, |n|), floor)``."""
    tol = np.maximum(rel * np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) > tol


# --------------------------------------------------------------------------
# morphology and metric oracles


def _neighbours(conn):
    offs = [o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)]
    if conn == 6:
        return [o for o in offs if sum(map(abs, o)) == 1]
    if conn == 18:
        return [o for o in offs if sum(map(abs, o)) <= 2]
    return offs


def flood_components(mask, conn=26):
    """BFS labelling; labels assigned in raster order of each component's first voxel."""
    mask = np.asarray(mask, dtype=bool)
    lab = np.zeros(mask.shape, dtype=np.int64)
    nb = _neighbours(conn)
    sizes = []
    for start in zip(*np.nonzero(mask)):
        if lab[start]:
            continue
        cur = len(sizes) + 1
        lab[start] = cur
        q = deque([start])
        size = 0
        while q:
            v = q.popleft()
            size += 1
            for d in nb:
                u = (v[0] + d[0], v[1] + d[1], v[2] + d[2])
                if all(0 <= u[i] < mask.shape[i] for i in range(3)) and mask[u] and not lab[u]:
                    lab[u] = cur
                    q.append(u)
        sizes.append(size)
    return lab, sizes


def flood_fill_holes(mask):
    """Background reachable from the border through 6-neighbours stays background."""
    mask = np.asarray(mask, dtype=bool)
    outside = np.zeros(mask.shape, dtype=bool)
    q = deque()
    for v in zip(*np.nonzero(~mask)):
        if any(v[i] in (0, mask.shape[i] - 1) for i in range(3)):
            outside[v] = True
            q.append(v)
    nb = _neighbours(6)
    while q:
        v = q.popleft()
        for d in nb:
            u = (v[0] + d[0], v[1] + d[1], v[2] + d[2])
            if all(0 <= u[i] < mask.shape[i] for i in range(3)) and not mask[u] and not outside[u]:
                outside[u] = True
                q.append(u)
    return ~outside


def brute_remove_small(mask, frac, conn=26):
    lab, sizes = flood_components(mask, conn)
    if not sizes:
        return np.asarray(mask, dtype=bool).copy()
    keep = [0] + [i + 1 for i, s in enumerate(sizes) if s >= frac * max(sizes)]
    return np.isin(lab, keep) & (lab > 0)


def brute_surface(mask):
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros_like(mask)
    for v in zip(*np.nonzero(mask)):
        for d in _neighbours(6):
            u = (v[0] + d[0], v[1] + d[1], v[2] + d[2])
            if not all(0 <= u[i] < mask.shape[i] for i in range(3)) or not mask[u]:
                out[v] = True
                break
    return out


def sort_percentile(values, q):
    x = sorted(float(v) for v in values)
    h = (len(x) - 1) * q / 100.0
    lo = int(np.floor(h))
    hi = min(lo + 1, len(x) - 1)
    return x[lo] + (h - lo) * (x[hi] - x[lo])


def brute_hd95(a, b, spacing=(1.0, 1.0, 1.0)):
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        return float(np.linalg.norm(np.array(a.shape) * np.array(spacing)))
    sp = np.asarray(spacing, dtype=float)
    pa = np.argwhere(brute_surface(a)) * sp
    pb = np.argwhere(brute_surface(b)) * sp
    diff = pa[:, None, :] - pb[None, :, :]
    d = np.sqrt((diff[..., 0] ** 2 + diff[..., 1] ** 2) + diff[..., 2] ** 2)
    return sort_percentile(np.concatenate([d.min(axis=1), d.min(axis=0)]), 95)


def brute_dice(a, b):
    a = set(zip(*np.nonzero(a)))
    b = set(zip(*np.nonzero(b)))
    if not a and not b:
        return 1.0
    return 2 * len(a & b) / (len(a) + len(b))


# --------------------------------------------------------------------------
# NIfTI header decoder written against the format description


def decode_nifti_header(raw):
    """Field-by-field little-endian decode with explicit byte offsets."""
    f = {}
    f["sizeof_hdr"] = struct.unpack_from("<i", raw, 0)[0]
    f["dim"] = struct.unpack_from("<8h", raw, 40)
    f["datatype"] = struct.unpack_from("<h", raw, 70)[0]
    f["bitpix"] = struct.unpack_from("<h", raw, 72)[0]
    f["pixdim"] = struct.unpack_from("<8f", raw, 76)
    f["vox_offset"] = struct.unpack_from("<f", raw, 108)[0]
    f["scl_slope"], f["scl_inter"] = struct.unpack_from("<2f", raw, 112)
    f["xyzt_units"] = raw[123]
    f["qform_code"], f["sform_code"] = struct.unpack_from("<2h", raw, 252)
    f["quatern"] = struct.unpack_from("<3f", raw, 256)
    f["qoffset"] = struct.unpack_from("<3f", raw, 268)
    f["srow"] = (
        struct.unpack_from("<4f", raw, 280),
        struct.unpack_from("<4f", raw, 296),
        struct.unpack_from("<4f", raw, 312),
    )
    f["magic"] = raw[344:348]
    return f
