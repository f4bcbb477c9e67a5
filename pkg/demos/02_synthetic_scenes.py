"""Generating crowd scenes and the labels that come with them.

Runs through one scene in detail (geometry, blur band, instance mask),
then writes a small dataset to demos/out/scenes so you can open the
images in anything that reads PPM.
"""

from pathlib import Path

import numpy as np

from crowdloc.data import (
    SyntheticConfig,
    augment,
    generate_scene,
    render_instance_mask,
    write_dataset,
)
from crowdloc.instances import connected_components
from crowdloc.pnm import save_pgm, save_ppm, to_u8

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

cfg = SyntheticConfig(height=96, width=96, count_range=(8, 14), seed=7)
scene = generate_scene(cfg, index=0)

print(f"scene {scene.id}: image {scene.image.shape}, "
      f"{len(scene.heads)} heads")
print()
print("heads are drawn with a radius that grows toward the bottom of the")
print("frame, the way a camera looking down a street sees them:")
print()
print("   y (row)   box w x h")
for head in sorted(scene.heads, key=lambda a: a.y):
    print(f"   {head.y:6.1f}    {head.w:.1f} x {head.h:.1f}")

# the upper third of the frame gets a slight defocus; compare high-
# frequency energy above and below the band edge
band_rows = int(round(cfg.blur_band * cfg.height))
gray = scene.image.mean(axis=0)
hf = np.abs(np.diff(gray, axis=1))
print()
print(f"blur band covers the top {band_rows} rows:")
print(f"   mean |horizontal gradient| inside band : {hf[:band_rows].mean():.4f}")
print(f"   mean |horizontal gradient| below band  : {hf[band_rows:].mean():.4f}")

mask = render_instance_mask(scene)
labels = connected_components(mask[0] > 0)
print()
print(f"instance mask: {labels.max()} components for {len(scene.heads)} heads")

save_ppm(out_dir / "scene.ppm", to_u8(np.moveaxis(scene.image, 0, -1)))
save_pgm(out_dir / "scene_mask.pgm", to_u8(mask[0].astype(np.float32)))
print(f"wrote {out_dir / 'scene.ppm'} and scene_mask.pgm")

print()
print("augmentation keeps labels attached to pixels; same head, new place:")
rng = np.random.default_rng(3)
moved = augment(scene, rng)
print(f"   original first head: x={scene.heads[0].x:.1f} y={scene.heads[0].y:.1f}")
print(f"   augmented first head: x={moved.heads[0].x:.1f} y={moved.heads[0].y:.1f}")
print(f"   augmented head count: {len(moved.heads)} "
      f"(crops may drop heads near the border)")

print()
dataset_dir = out_dir / "scenes"
small = SyntheticConfig(height=64, width=64, count_range=(4, 10), seed=11)
ids = write_dataset(small, 12, dataset_dir)
print(f"wrote {len(ids)} scenes under {dataset_dir}/")
print("each scene is a .ppm image plus a .txt of 'score x y w h' lines;")
print("manifest.txt lists the ids in generation order")
