"""Reference predictors and the external plug-in boundary.

Three ways to supply probability maps:

* BaselinePredictor  -- classical color-contrast saliency; lets the whole
  pipeline run end to end with no trained network.
* FixturePredictor   -- replays 16-bit maps stored per case in a directory
  (optionally one subdirectory per fold).
* CommandPredictor   -- invokes an external command once per image batch;
  the command reads image paths from stdin (one per line) and writes the
  corresponding 16-bit map paths to stdout in the same order. This is the
  integration point for real trained networks.
"""
from __future__ import annotations

import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DataError, PredictorContractError, ValidationError
from .pngio import read_probmap, write_image
from .rasters import Image, NormalizedImage, ProbabilityMap


class BaselinePredictor:
    """Distance-from-border-color saliency, blurred and min-max normalized.

    Lesions photograph as compact regions whose color departs from the
    surrounding skin, so distance to the border's median color is a usable
    stand-in probability. Deterministic; no learned parameters.
    """

    wants_normalized = True

    def __init__(self, blur_sigma: float = 2.0, border: int = 4):
        self.blur_sigma = blur_sigma
        self.border = border

    def predict(
        self, image: NormalizedImage | Image, case_id: str | None = None
    ) -> ProbabilityMap:
        x = image.data.astype(np.float64)
        b = min(self.border, (x.shape[0] + 1) // 2, (x.shape[1] + 1) // 2)
        frame = np.ones(x.shape[:2], dtype=bool)
        frame[b:-b or None, b:-b or None] = False
        ref = np.median(x[frame], axis=0)
        dist = np.sqrt(((x - ref) ** 2).sum(axis=2))
        dist = gaussian_filter(dist, self.blur_sigma, mode="mirror")
        lo, hi = dist.min(), dist.max()
        if hi - lo < 1e-12:
            return ProbabilityMap(np.zeros(x.shape[:2], dtype=np.float32))
        return ProbabilityMap(((dist - lo) / (hi - lo)).astype(np.float32))


class FixturePredictor:
    """Serves stored probability maps keyed by case id."""

    wants_normalized = True

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise DataError(f"fixture directory not found: {self.directory}")

    def predict(
        self, image: NormalizedImage | Image, case_id: str | None = None
    ) -> ProbabilityMap:
        if not case_id:
            raise ValidationError("fixture predictor needs a case_id")
        path = self.directory / f"{case_id}.png"
        if not path.exists():
            raise DataError(f"missing fixture map for case {case_id!r}: {path}")
        return read_probmap(path)


class CommandPredictor:
    """Shells out to an external model once per image batch."""

    wants_normalized = False

    def __init__(self, command: str | list[str], timeout: float | None = None):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise ValidationError("predictor command must be non-empty")
        self.timeout = timeout

    def predict(
        self, image: NormalizedImage | Image, case_id: str | None = None
    ) -> ProbabilityMap:
        return self.predict_batch([image], case_id)[0]

    def predict_batch(
        self, images: list[NormalizedImage | Image], case_id: str | None = None
    ) -> list[ProbabilityMap]:
        with tempfile.TemporaryDirectory(prefix="dermseg-predict-") as tmp:
            paths = []
            for i, img in enumerate(images):
                if not isinstance(img, Image):
                    raise ValidationError("command predictors consume 8-bit images")
                p = Path(tmp) / f"batch_{i:04d}.png"
                write_image(img, p)
                paths.append(str(p))
            try:
                proc = subprocess.run(
                    self.argv,
                    input="\n".join(paths) + "\n",
                    capture_output=True,
                    text=True,
                    timeout=self.timeout,
                )
            except (OSError, subprocess.TimeoutExpired) as e:
                raise PredictorContractError(f"predictor command failed to run: {e}") from e
            if proc.returncode != 0:
                raise PredictorContractError(
                    f"predictor command exited {proc.returncode}: {proc.stderr.strip()[:500]}"
                )
            out_paths = [line.strip() for line in proc.stdout.splitlines() if line.strip()]
            if len(out_paths) != len(paths):
                raise PredictorContractError(
                    f"predictor command wrote {len(out_paths)} paths for {len(paths)} inputs"
                )
            try:
                return [read_probmap(p) for p in out_paths]
            except DataError as e:
                raise PredictorContractError(f"predictor output unreadable: {e}") from e
