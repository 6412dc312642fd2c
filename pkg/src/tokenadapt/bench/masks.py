"""Per-view pruning masks as binary PPM images and plain-text grids.

Cell styling: pruned cells are filled black, kept cells light gray.
Recycled cells get a green outer border and planted cells an orange inner
ring. In the text grid each cell is one character:

    .  kept by score      r  recycled      #  pruned
    o  planted, kept      R  planted, recycled      @  planted, pruned
"""

import os

import numpy as np

from .scenario import VIEW_NAMES

CELL = 12
WHITE = (255, 255, 255)
GRAY = (200, 200, 200)
BLACK = (0, 0, 0)
GREEN = (0, 200, 0)
ORANGE = (255, 140, 0)

KEPT, RECYCLED, PRUNED = "kept", "recycled", "pruned"
_SYMBOL = {(KEPT, False): ".", (RECYCLED, False): "r", (PRUNED, False): "#",
           (KEPT, True): "o", (RECYCLED, True): "R", (PRUNED, True): "@"}
_FROM_SYMBOL = {v: k for k, v in _SYMBOL.items()}


def view_name(v):
    return VIEW_NAMES[v] if v < len(VIEW_NAMES) else f"View {v}"


def cell_states(decision, layout, planted=()):
    """{view: [(state, planted), ...]} in token order within each view."""
    recycled = set(np.asarray(decision.I_recycle).tolist())
    final = set(np.asarray(decision.I_final).tolist())
    planted = set(np.asarray(planted).tolist())
    out = {}
    for i in layout.visual:
        i = int(i)
        state = RECYCLED if i in recycled else KEPT if i in final else PRUNED
        out.setdefault(int(layout.view_id[i]), []).append((state, i in planted))
    return out


def _grid_width(n):
    w = int(np.ceil(np.sqrt(n)))
    return max(w, 1)


def render_view(cells):
    """RGB array for one view."""
    cols = _grid_width(len(cells))
    rows = -(-len(cells) // cols)
    img = np.full((rows * CELL, cols * CELL, 3), WHITE, dtype=np.uint8)
    for j, (state, planted) in enumerate(cells):
        r, c = divmod(j, cols)
        y, x = r * CELL, c * CELL
        box = img[y + 1:y + CELL - 1, x + 1:x + CELL - 1]
        box[:] = BLACK if state == PRUNED else GRAY
        if state == RECYCLED:
            box[:2, :] = GREEN
            box[-2:, :] = GREEN
            box[:, :2] = GREEN
            box[:, -2:] = GREEN
        if planted:
            ring = box[2:-2, 2:-2]
            ring[:2, :] = ORANGE
            ring[-2:, :] = ORANGE
            ring[:, :2] = ORANGE
            ring[:, -2:] = ORANGE
    return img


def write_ppm(path, img):
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos).reshape(h, w, 3)


def parse_view_image(img, n_cells):
    """Recover (state, planted) per cell from a rendered view."""
    cols = _grid_width(n_cells)
    out = []
    for j in range(n_cells):
        r, c = divmod(j, cols)
        y, x = r * CELL, c * CELL
        border = tuple(img[y + 1, x + 1])
        ring = tuple(img[y + 3, x + 3])
        center = tuple(img[y + CELL // 2, x + CELL // 2])
        state = RECYCLED if border == GREEN else PRUNED if center == BLACK else KEPT
        out.append((state, ring == ORANGE))
    return out


def text_grid(states):
    lines = []
    for v in sorted(states):
        cells = states[v]
        cols = _grid_width(len(cells))
        lines.append(f"# view {v} {view_name(v)}")
        syms = [_SYMBOL[c] for c in cells]
        lines.extend("".join(syms[i:i + cols]) for i in range(0, len(syms), cols))
    return "\n".join(lines) + "\n"


def parse_text_grid(text):
    out, current = {}, None
    for line in text.splitlines():
        if line.startswith("# view "):
            current = int(line.split()[2])
            out[current] = []
        elif line.strip():
            out[current].extend(_FROM_SYMBOL[ch] for ch in line)
    return out


def render_masks(decision, layout, scenario, out_dir):
    """One PPM per view plus ``masks.txt``; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    states = cell_states(decision, layout, scenario.planted if scenario is not None else ())
    paths = []
    for v, cells in sorted(states.items()):
        slug = view_name(v).lower().replace(" ", "_")
        p = os.path.join(out_dir, f"view{v}_{slug}.ppm")
        write_ppm(p, render_view(cells))
        paths.append(p)
    p = os.path.join(out_dir, "masks.txt")
    with open(p, "w") as fh:
        fh.write(text_grid(states))
    paths.append(p)
    return paths
