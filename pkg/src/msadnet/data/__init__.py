from .dataset import Dataset, DatasetLayoutError, DatasetManifest, SampleRecord, load_dataset, scan_dataset
from .image import from_tensor, prepare, resize_array, resize_bilinear, to_tensor
from .pnm import ImageBuffer, decode_pnm, encode_pnm, load_pnm, save_pnm
from .synthetic import SyntheticSpec, generate_synthetic, materialize, pixel_statistics_baseline, synthetic_dataset
