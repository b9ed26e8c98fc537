"""Point cloud files, attribute tables, dataset statistics and splits."""

from .las import LabeledFormatError, LasFormatError, read_las, write_las
from .manifest import (
    ATTRIBUTE_HEADER,
    DatasetManifest,
    PlotEntry,
    config_hash,
    dataset_stats,
    entry_for,
    export_tree_attributes,
    holdout_counts,
    largest_remainder_counts,
    load_manifest,
    read_tree_attributes,
    save_manifest,
    split_dataset,
)
