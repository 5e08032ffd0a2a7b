"""Fitting a polynomial color transform between two devices.

Run: python3 demos/color_transform.py
"""
import numpy as np

from pcalign import colorxform
from pcalign import synthbench as sb

# Pretend the camera and the scanner disagree about color: take a rendered
# image and push it through random brightness, contrast, saturation, hue,
# gamma and blur.
scene = sb.generate_scene(sb.SceneSpec(seed=4, image_size=(96, 96)))
print("sampled effects:", sb.sample_color_effects(7))
camera = sb.apply_color_effects(scene.image, seed=7)
scanner = scene.image

cam = camera.reshape(-1, 3)
ref = scanner.reshape(-1, 3)
print(f"mean color gap before: {np.linalg.norm(cam - ref, axis=1).mean():.4f}")

# Fit D (3x10 for second order, 3x4 for first) and map the camera colors into
# the scanner's space.
for order in (1, 2):
    D, inliers = colorxform.solve_color_transform(cam, ref, beta_max=0.3, order=order)
    mapped, clipped = colorxform.apply_color_transform(D, cam)
    gap = np.linalg.norm(mapped - ref, axis=1).mean()
    print(f"order {order}: gap {gap:.4f}, inliers {inliers.flags.mean():.1%}, "
          f"clipped {clipped.any(axis=1).mean():.1%}, refits {inliers.rounds}")

# Corrupt a tenth of the pairs, as occlusions or specular highlights would.
rng = np.random.default_rng(1)
bad = rng.choice(len(ref), len(ref) // 10, replace=False)
noisy = ref.copy()
noisy[bad] = rng.uniform(size=(len(bad), 3))
D_all, _ = colorxform.solve_color_transform(cam, noisy, beta_max=10.0)
D_gate, info = colorxform.solve_color_transform(cam, noisy, beta_max=0.2)
clean = np.ones(len(ref), dtype=bool)
clean[bad] = False
for name, D in (("no gating", D_all), ("beta_max=0.2", D_gate)):
    mapped, _ = colorxform.apply_color_transform(D, cam)
    print(f"{name:>12}: gap on clean pixels {np.linalg.norm(mapped - ref, axis=1)[clean].mean():.4f}")
print("truncated cost per round:", np.round(info.cost_trace, 3))
