"""
Finding the row direction
=========================

Rows show up as the projection angle whose Radon profile has the largest
variance.  We tilt a field, estimate the angle and undo the tilt.
"""
import numpy as np

from masc.orientation import radon_variance, rotate
from masc.pipeline import orientation_map
from masc.synth import FieldSpec, generate_field

field = generate_field(FieldSpec(ranges=2, rows_per_range=4, plants_per_row=12, seed=4))

for tilt in (0.0, 17.0, -32.0, 55.0):
    img = rotate(field.image, tilt, fill=0)
    est = radon_variance(orientation_map(img))
    print(f"tilt {tilt:+6.1f}  rows at {est.theta:5.1f} deg  correction {est.correction:+6.1f}  "
          f"contrast {est.contrast:5.1f}")

# a picture with no rows has a flat profile and is left alone
noise = np.random.default_rng(0).normal(size=(300, 300))
est = radon_variance(noise)
print(f"noise: contrast {est.contrast:.2f}, low confidence = {est.low_confidence}, correction {est.correction}")
