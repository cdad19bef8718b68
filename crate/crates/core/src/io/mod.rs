//! Binary records, dataset directories, PNG and CSV output.

mod dataset;
mod metrics;
mod record;
mod render;

pub use dataset::{
    read_sample, write_dataset, write_sample, BandInfo, Dataset, DatasetManifest, SampleData,
    SampleEntry, Split, DATASET_FORMAT, MANIFEST,
};
pub use metrics::{read_csv, write_csv, EpochMetrics};
pub use record::{
    decode_record, encode_record, read_record, read_records, write_record, write_records,
    ArrayData, DType, RecordHeader, MAGIC,
};
pub use render::{colourize, render_png, render_row, Colormap, Normalization};
