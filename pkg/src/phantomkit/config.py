"""Flat key-value configuration shared by the CLI surfaces.

Format: one `key = value` per line, `#` comments, order-free. Every default
below is the working value used throughout the package; a config file only
needs the keys it overrides.
"""

from .detector import DetectorConfig, SizeGate

DEFAULTS = {
    # success criteria
    "confidence_threshold": "0.5",
    "overlap_iou": "0.1",
    # placement
    "forward_min": "20.0",
    "forward_max": "40.0",
    "lateral_min": "-6.0",
    "lateral_max": "6.0",
    "min_bbox_area": "400.0",
    # injection
    "min_injected_points": "20",
    "template_min_points": "100",
    # surrogate detector
    "ground_tile": "2.0",
    "ground_height_offset": "0.25",
    "cell_size": "0.4",
    "min_cluster_points": "15",
    "car_h": "1.2:2.3",
    "car_w": "1.3:2.2",
    "car_l": "3.0:5.5",
    "car_score_saturation": "400",
    "pedestrian_h": "1.2:2.1",
    "pedestrian_w": "0.3:1.2",
    "pedestrian_l": "0.3:1.2",
    "pedestrian_score_saturation": "120",
    # render style
    "bev_forward_extent": "70.0",
    "bev_lateral_extent": "40.0",
    "bev_pixels_per_meter": "10.0",
    "label_font_size": "12",
    "real_box_color": "80,220,80",
    "phantom_box_color": "210,70,220",
    "detection_box_color": "245,200,60",
}

_COMMENTS = {
    "confidence_threshold": "a detection counts only with score strictly above this",
    "overlap_iou": "minimum BEV IoU between a detection and the intended phantom box",
    "forward_min": "phantom placement band, meters ahead of the sensor",
    "lateral_min": "lateral placement band, meters (LiDAR y, left positive)",
    "min_bbox_area": "reject placements whose projected box is smaller, px^2",
    "min_injected_points": "abort the attempt when decimation leaves fewer points",
    "ground_tile": "surrogate detector: ground-minimum tile edge, meters",
    "cell_size": "surrogate detector: clustering occupancy cell edge, meters",
    "bev_forward_extent": "BEV render coverage, meters",
}


class ConfigError(ValueError):
    pass


class Config:
    def __init__(self, overrides=None):
        self.values = dict(DEFAULTS)
        for key, val in (overrides or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            self.values[key] = str(val)

    @classmethod
    def parse(cls, text):
        overrides = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            overrides[key] = val
        return cls(overrides)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.parse(f.read())

    def get(self, key):
        return self.values[key]

    def get_float(self, key):
        return float(self.values[key])

    def get_int(self, key):
        return int(float(self.values[key]))

    def get_rgb(self, key):
        parts = [int(v) for v in self.values[key].split(",")]
        if len(parts) != 3:
            raise ConfigError(f"{key}: expected r,g,b")
        return tuple(parts)

    def get_band(self, key):
        lo, hi = self.values[key].split(":")
        return (float(lo), float(hi))

    def forward_band(self):
        return (self.get_float("forward_min"), self.get_float("forward_max"))

    def lateral_band(self):
        return (self.get_float("lateral_min"), self.get_float("lateral_max"))

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            ground_tile=self.get_float("ground_tile"),
            ground_height_offset=self.get_float("ground_height_offset"),
            cell_size=self.get_float("cell_size"),
            min_cluster_points=self.get_int("min_cluster_points"),
            size_gates={
                "Car": SizeGate(self.get_band("car_h"), self.get_band("car_w"),
                                self.get_band("car_l")),
                "Pedestrian": SizeGate(self.get_band("pedestrian_h"),
                                       self.get_band("pedestrian_w"),
                                       self.get_band("pedestrian_l")),
            },
            score_saturation={
                "Car": self.get_int("car_score_saturation"),
                "Pedestrian": self.get_int("pedestrian_score_saturation"),
            },
        )

    def format(self):
        lines = []
        for key in DEFAULTS:
            if key in _COMMENTS:
                lines.append(f"# {_COMMENTS[key]}")
            lines.append(f"{key} = {self.values[key]}")
        return "".join(line + "\n" for line in lines)
