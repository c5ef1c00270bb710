"""
The classical detector, stage by stage
======================================

median filter -> excess green -> Otsu -> disk erosion -> distance transform
-> regional maxima -> watershed -> one box per cell.
"""
import sys
from pathlib import Path

import numpy as np

from masc.raster import ClassicalConfig, cells_to_detections, segment, to_gray8, write_image
from masc.synth import FieldSpec, generate_field

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

# one short row with plenty of doubles, so touching plants show up
field = generate_field(FieldSpec(ranges=1, rows_per_range=2, plants_per_row=8, double_rate=0.5, seed=3))
img = field.image

st = segment(img, ClassicalConfig())
print(f"Otsu threshold on ExG: {st.threshold:.1f}")
print(f"erosion radius picked from blob widths: {st.radius} px")
print(f"vegetation pixels: {int(st.mask.sum())}, after erosion: {int(st.eroded.sum())}")

n_cells = int(st.labels.max())
dets = cells_to_detections(st)
# grown-together plants are split into single cells, so compare plants, not boxes
plants = sum(d.multiplicity for d in field.truth)
print(f"{n_cells} watershed cells -> {len(dets)} boxes; truth has {len(field.truth)} boxes holding {plants} plants")

for name in ("exg", "mask", "eroded", "distance"):
    write_image(out / f"stage_{name}.png", to_gray8(getattr(st, name)))

# false-colour labels
rng = np.random.default_rng(0)
palette = rng.integers(40, 256, (n_cells + 1, 3)).astype(np.uint8)
palette[0] = 0
write_image(out / "stage_labels.png", palette[st.labels])
print("stage images in", out)
