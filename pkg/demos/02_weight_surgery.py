# Walkthrough: adapting 3-channel convolution weights to 4-channel input.
#
# A pretrained first layer expects RGB; our chips carry RGB + mask. The two
# adaptations below rewrite the input-channel axis, and the reference
# convolution verifies the algebra numerically.

import numpy as np

from roofstack.tensorops import (
    Tensor4,
    adapt_weights_proportional,
    adapt_weights_zero,
    conv2d_reference,
)

rng = np.random.default_rng(0)
w3 = Tensor4(rng.normal(size=(5, 5, 3, 32)).astype(np.float32))
print(f"original weights: {w3.data.shape} (kernel 5x5, 3 channels in, 32 maps out)")

image_rgb = rng.normal(size=(12, 12, 3))
baseline = conv2d_reference(image_rgb, w3)

# variant 1: the added channel contributes nothing
w4_zero = adapt_weights_zero(w3, 4)
image_rgbm = np.concatenate([image_rgb, rng.normal(size=(12, 12, 1))], axis=2)
out_zero = conv2d_reference(image_rgbm, w4_zero)
print("zero variant: feature maps unchanged by the 4th channel ->", np.array_equal(out_zero, baseline))

# variant 2: every channel contributes proportionally; replicating input
# channels reproduces the original response
w6 = adapt_weights_proportional(w3, 6)
image_replicated = image_rgb[:, :, [0, 1, 2, 0, 1, 2]]
out_prop = conv2d_reference(image_replicated, w6)
print("proportional variant: max deviation on replicated input =", float(np.abs(out_prop - baseline).max()))

# feature-map statistics stay in the same regime after adaptation
w4_prop = adapt_weights_proportional(w3, 4)
out4 = conv2d_reference(image_rgbm, w4_prop)
print(f"output mean/var  3ch: {baseline.mean():+.4f}/{baseline.var():.4f}")
print(f"output mean/var  4ch: {out4.mean():+.4f}/{out4.var():.4f}")
