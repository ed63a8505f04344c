"""scikit-learn style wrappers around the autoencoder, the generator and the slant probe."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .autoencoder import ae_decode, ae_encode, ae_train, reconstruction_mse
from .config import RunConfig
from .diffusion import GUIDANCE
from .metrics import fit_slant_sign_probe, log_spectrum, style_embeddings
from .synthglyph import DatasetManifest, check_text
from .synthglyph.render import HEIGHT, WIDTH
from .tensor import ShapeError

IMAGE_SHAPE = (3, HEIGHT, WIDTH)
LATENT_SHAPE = (4, HEIGHT // 4, WIDTH // 4)


def check_images(X, name="X") -> np.ndarray:
    """Images as float32 [n,3,32,96] in [0,1]; flattened rows are reshaped."""
    X = np.asarray(X, dtype=np.float32)
    size = int(np.prod(IMAGE_SHAPE))
    if X.ndim == 2 and X.shape[1] == size:
        X = X.reshape((len(X),) + IMAGE_SHAPE)
    if X.ndim != 4 or X.shape[1:] != IMAGE_SHAPE:
        raise ShapeError(f"{name} must be [n,{','.join(map(str, IMAGE_SHAPE))}] or [n,{size}], "
                         f"got {list(X.shape)}")
    if len(X) == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    if X.min() < 0 or X.max() > 1:
        raise ValueError(f"{name} values must lie in [0,1], got [{X.min():.3g}, {X.max():.3g}]")
    return X


def check_latents(Z, name="Z") -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float32)
    if Z.ndim == 2 and Z.shape[1] == int(np.prod(LATENT_SHAPE)):
        Z = Z.reshape((len(Z),) + LATENT_SHAPE)
    if Z.ndim != 4 or Z.shape[1:] != LATENT_SHAPE:
        raise ShapeError(f"{name} must be [n,4,8,24] or [n,768], got {list(Z.shape)}")
    return Z


def check_texts(texts, n=None) -> list[str]:
    if isinstance(texts, str):
        raise TypeError("texts must be a sequence of words, not a single string")
    texts = [check_text(t) for t in texts]
    if n is not None and len(texts) != n:
        raise ValueError(f"expected {n} texts, got {len(texts)}")
    return texts


def check_manifest(data) -> DatasetManifest:
    if isinstance(data, DatasetManifest):
        return data
    if isinstance(data, (str, Path)):
        return DatasetManifest.read(data)
    raise TypeError(f"expected a DatasetManifest or a dataset directory, got {type(data).__name__}")


class GlyphAutoencoder(TransformerMixin, BaseEstimator):
    """Fits the latent autoencoder; ``transform`` gives flattened normalized latents."""

    def __init__(self, steps=2000, seed=0, lr=1e-3, batch_size=16, width=32):
        self.steps = steps
        self.seed = seed
        self.lr = lr
        self.batch_size = batch_size
        self.width = width

    def fit(self, X, y=None):
        X = check_images(X)
        self.model_, self.loss_curve_ = ae_train(X, self.steps, self.seed, lr=self.lr,
                                                 batch_size=self.batch_size, width=self.width)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return ae_encode(self.model_, check_images(X)).reshape(len(X), -1)

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        return ae_decode(self.model_, check_latents(Z))

    def score(self, X, y=None) -> float:
        """Negative per-pixel reconstruction MSE (higher is better)."""
        check_is_fitted(self, "model_")
        return -reconstruction_mse(self.model_, check_images(X))


class StyleDiffusionGenerator(BaseEstimator):
    """Trains the style-conditioned generator on a dataset manifest.

    ``fit`` takes a :class:`DatasetManifest` (or its directory). ``predict``
    renders ``texts`` in the style of the matching reference images;
    ``transform`` returns the global style vectors of images.
    """

    def __init__(self, steps=2000, batch=16, seed=0, lr=1e-4, codebook_size=128, use_saq=True,
                 use_sce=True, use_pce=True, guidance=GUIDANCE, sample_steps=50,
                 allow_writer_reuse=False, autoencoder=None, ae_steps=2000):
        self.steps = steps
        self.batch = batch
        self.seed = seed
        self.lr = lr
        self.codebook_size = codebook_size
        self.use_saq = use_saq
        self.use_sce = use_sce
        self.use_pce = use_pce
        self.guidance = guidance
        self.sample_steps = sample_steps
        self.allow_writer_reuse = allow_writer_reuse
        self.autoencoder = autoencoder
        self.ae_steps = ae_steps

    def _config(self, manifest) -> RunConfig:
        return RunConfig(data=str(manifest.root), steps=self.steps, batch=self.batch, seed=self.seed,
                         lr=self.lr, codebook_size=self.codebook_size, use_saq=self.use_saq,
                         use_sce=self.use_sce, use_pce=self.use_pce, guidance=self.guidance,
                         sample_steps=self.sample_steps, allow_writer_reuse=self.allow_writer_reuse)

    def _autoencoder(self, manifest):
        from .train import load_autoencoder
        ae = self.autoencoder
        if ae is None:
            images = manifest.images(manifest.select("train"))
            return GlyphAutoencoder(self.ae_steps, self.seed).fit(images).model_
        if isinstance(ae, GlyphAutoencoder):
            check_is_fitted(ae, "model_")
            return ae.model_
        if isinstance(ae, (str, Path)):
            return load_autoencoder(ae)
        return ae

    def fit(self, X, y=None):
        from .train import train
        manifest = check_manifest(X)
        cfg = self._config(manifest)
        result = train(cfg, manifest, self._autoencoder(manifest))
        self.model_ = result.model
        self.training_log_ = result.log
        return self

    def predict(self, references, texts, seed=None):
        from .generate import generate
        check_is_fitted(self, "model_")
        refs = check_images(references, "references")
        texts = check_texts(texts, len(refs))
        return generate(self.model_, refs, texts, seed=self.seed if seed is None else seed,
                        steps=self.sample_steps, scale=self.guidance)

    def transform(self, X):
        check_is_fitted(self, "model_")
        return style_embeddings(self.model_.style, check_images(X), self.model_.use_saq)

    def save(self, path) -> None:
        from .train import save_model
        check_is_fitted(self, "model_")
        save_model(self.model_, path)

    @classmethod
    def load(cls, path) -> "StyleDiffusionGenerator":
        from .train import load_model
        est = cls()
        est.model_ = load_model(path)
        est.use_saq = est.model_.use_saq
        est.codebook_size = est.model_.style.codebook.size
        return est


class SlantProbe(ClassifierMixin, BaseEstimator):
    """Predicts the sign of a writer's slant from the image log spectrum."""

    def __init__(self, C=1.0):
        self.C = C

    def fit(self, X, y):
        X = check_images(X)
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (len(X),):
            raise ValueError(f"y must have one slant per image, got shape {y.shape}")
        self.pipeline_ = fit_slant_sign_probe(X, y, C=self.C)
        self.classes_ = self.pipeline_.classes_
        return self

    def predict(self, X):
        check_is_fitted(self, "pipeline_")
        return self.pipeline_.predict(log_spectrum(check_images(X)))

    def score(self, X, y, sample_weight=None) -> float:
        """Accuracy against the sign of ``y`` (slants or signs)."""
        return float(np.average(self.predict(X) == np.sign(np.asarray(y)).astype(int), weights=sample_weight))
