"""
Playback-speed tuples and order labels
======================================

A training example is a tuple of clips from one video, each played at a
different signed speed. The network sees the clips shuffled and predicts
which of the n! orderings it was given.
"""

import numpy as np

from vidpace import FrameVolume, tuple_speeds, sample_tuple, permutation_to_label, label_to_permutation
from vidpace.sampler import ClipSpec, clip_indices

# the speed set grows with n; negative speeds play the video backwards
for n in range(2, 7):
    print(n, tuple_speeds(n))

# frame indices wrap around the end of the video
print(clip_indices(ClipSpec(speed=3, anchor=15, length=4), 20))    # 15 18 1 4
print(clip_indices(ClipSpec(speed=-2, anchor=10, length=4), 100))  # 10 8 6 4

# a toy video whose frame k holds the value k makes sampled indices visible in the pixels
L = 40
frames = np.broadcast_to(np.arange(L, dtype=np.uint8)[:, None, None, None], (L, 4, 4, 3)).copy()
video = FrameVolume(frames, "ramp")

rng = np.random.default_rng(0)
sample = sample_tuple(video, n=3, m=6, rng=rng)
for pos, clip in enumerate(sample.clips):
    print(f"input slot {pos}: speed {clip.speed:+d}, frames {clip.pixels[:, 0, 0, 0].tolist()}")

# the label is the lexicographic rank of the permutation
print("permutation", sample.permutation, "-> label", sample.label)
assert permutation_to_label(label_to_permutation(sample.label, 3)) == sample.label

# labels are uniform over the 3! = 6 classes
counts = np.bincount([sample_tuple(video, 3, 2, rng).label for _ in range(3000)], minlength=6)
print("label histogram", counts.tolist())
