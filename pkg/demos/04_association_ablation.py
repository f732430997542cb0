"""Association strategy ablation on an engineered occlusion scene.

Replays the same sequence under three association strategies and compares
final track counts to the ground-truth object count: image-overlap gating
alone leaves stray fragment tracks behind, quadric similarity alone confuses
look-alike neighbors, and the combination lands on the true count.
"""

import logging
import os

logging.disable(logging.WARNING)

from objmap.pipeline import run_pipeline
from objmap.scenes import ablation_config, ablation_scene
from objmap.simulator import generate

out = os.path.join("demo_output", "ablation4")
spec = ablation_scene(4, seed=1)
generate(spec, out)
print(f"scene: {len(spec.objects)} objects, {len(spec.occluders)} occluder posts, "
      f"{spec.n_frames} frames\n")

for mode in ("iou", "qd", "qd+iou"):
    result = run_pipeline(out, ablation_config(mode))
    print(f"association = {mode:6s} -> final track count {result.track_count()}")

print(f"\nground truth object count: {len(spec.objects)}")
