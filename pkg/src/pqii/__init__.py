"""Product quantization, IVFPQ indexing, and chunked-parallel PQ training."""

from .dataset import (
    DatasetError,
    RowRange,
    SyntheticSpec,
    chunk_rows,
    gen_synthetic,
    load_csv,
    load_fvecs,
    load_matrix,
    load_native,
    save_fvecs,
    save_matrix,
    save_native,
)
from .ivf import (
    InvertedIndex,
    IVFError,
    QueryResult,
    flat_scan,
    ivf_add,
    ivf_build,
    ivf_merge,
    ivf_query,
    ivf_query_subset,
    load_index,
    merge_all,
    save_index,
)
from .kmeans import KMeansError, KMeansResult, kmeans_fit, nearest_centroid
from .pipeline import (
    ChunkOutput,
    PipelineConfig,
    PipelineError,
    PipelineReport,
    aggregate_representatives,
    fit_global,
    run_pipeline,
    train_chunk,
)
from .pq import (
    Codebook,
    PQError,
    adc_lookup,
    adc_table,
    load_codebook,
    pq_decode,
    pq_encode,
    pq_fit,
    reconstruction_rmse,
    rmse,
    save_codebook,
)

__version__ = "0.1.0"
