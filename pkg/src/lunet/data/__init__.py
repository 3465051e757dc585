from .adapters import AdapterError, adapt_external
from .preprocess import (
    AugmentConfig,
    CropRecord,
    augment,
    color_jitter,
    derive_seed,
    normalize,
    pad_to_multiple,
    resize,
    resize_label,
    to_uint8,
)
from .sample import (
    Colormap,
    DecodeError,
    EncodeError,
    FundusSample,
    ManifestRow,
    decode_mask,
    encode_mask,
    load_sample,
    read_manifest,
    read_rgb,
    write_manifest,
    write_rgb,
)
from .split import SplitError, SplitManifest, split_dataset
from .synthetic import SynthConfig, generate_synthetic_dfi, generate_trees
