"""Dataset synthesis: domains, task-correlated pairing and the correlation estimator."""
from .domain import (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, NUM_CLASSES, Domain, load_idx,
                     rescale_domain, write_idx)
from .glyphs import PRESETS, GlyphStyle, glyph_domain, render_glyphs, style_from_seed, synth_glyph_domain
from .paired import (CONTAINER_MAGIC, CorrelationReport, EpochSource, PairedDataset, dump_dataset,
                     epoch_resample, estimate_task_correlation, load_dataset, parse_dataset,
                     sample_concat, save_dataset)

__all__ = [
    "IDX_IMAGES_MAGIC", "IDX_LABELS_MAGIC", "NUM_CLASSES", "Domain", "load_idx", "rescale_domain",
    "write_idx", "PRESETS", "GlyphStyle", "glyph_domain", "render_glyphs", "style_from_seed",
    "synth_glyph_domain", "CONTAINER_MAGIC", "CorrelationReport", "EpochSource", "PairedDataset",
    "dump_dataset", "epoch_resample", "estimate_task_correlation", "load_dataset", "parse_dataset",
    "sample_concat", "save_dataset",
]
