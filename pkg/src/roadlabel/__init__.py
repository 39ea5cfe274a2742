"""Transfer road attributes from an OpenStreetMap extract onto street-level panorama crops."""

from __future__ import annotations

from .config import ConfigError, ThresholdConfig
from .datasetio import Manifest, balance, balance_all, read_manifest, split_by_longitude, stats, write_manifest
from .evalkit import PredictionRecord, RecommendationRecord, accuracy, evaluate, mae, recommend
from .geo import GeoPoint, PlanePoint, Projector, haversine_m, project
from .labelgen import CropSpec, LabeledSample, Task
from .osmnet import Junction, JunctionMode, RoadNetwork, filter_roads, find_junctions, load_osm, parse_osm
from .panograph import BBox, PanoMeta, bfs_crawl, load_pano_file, save_pano_file
from .panoimage import unwarp
from .roadmatch import MatchResult, SpatialIndex, build_index, filter_offroad, forward_heading, nearest_way

__version__ = "0.1.0"

__all__ = [
    "BBox", "ConfigError", "CropSpec", "GeoPoint", "Junction", "JunctionMode", "LabeledSample", "Manifest",
    "MatchResult", "PanoMeta", "PlanePoint", "PredictionRecord", "Projector", "RecommendationRecord",
    "RoadNetwork", "SpatialIndex", "Task", "ThresholdConfig", "accuracy", "balance", "balance_all", "bfs_crawl",
    "build_index", "evaluate", "filter_offroad", "filter_roads", "find_junctions", "forward_heading",
    "haversine_m", "load_osm", "load_pano_file", "mae", "nearest_way", "parse_osm", "project", "read_manifest",
    "recommend", "save_pano_file", "split_by_longitude", "stats", "unwarp", "write_manifest",
]
