from .dataset import (
    CIFAR_CLASSES, RECORD_BYTES, DataFormatError, LabeledImageSet, batch_indices, concat_sets,
    decode_records, encode_records, load_cifar10_binary, split_half, stratified_split,
    synthetic_dataset, write_cifar10_binary,
)
from .augment import (
    MAX_DROP_PATH, AugmentConfig, augment, channel_stats, cutout, drop_path_mask,
    drop_path_probability, normalize, pad_and_crop,
)
