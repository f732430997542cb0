"""Generate a synthetic RGB-D dataset and walk through its layout."""

import os

from objmap.scenes import sphere_scene
from objmap.simulator import generate, load, load_gt

out = os.path.join("demo_output", "sphere_dataset")
spec = sphere_scene(seed=0, n_frames=12)
generate(spec, out)
print(f"wrote dataset to {out}/")
for root, dirs, files in sorted(os.walk(out)):
    rel = os.path.relpath(root, out)
    indent = "  " * (0 if rel == "." else rel.count(os.sep) + 1)
    print(f"{indent}{os.path.basename(root)}/")
    for fn in sorted(files)[:3]:
        print(f"{indent}  {fn}")
    if len(files) > 3:
        print(f"{indent}  ... ({len(files)} files)")

print("\nstreaming frames back:")
for frame in load(out):
    n_obj = (frame.instance > 0).sum()
    print(
        f"  frame {frame.index}: {len(frame.detections)} detections, "
        f"{n_obj} object pixels, depth range "
        f"{frame.depth[frame.depth > 0].min():.2f}..{frame.depth.max():.2f} m"
    )
    if frame.index >= 3:
        print("  ...")
        break

gt = load_gt(out)
obj = gt["objects"][0]
print(
    f"\nground truth: {obj['shape']} at {obj['quadric'].center}, "
    f"axes {obj['quadric'].semi_axes}, {len(gt['points'][1])} surface points"
)
