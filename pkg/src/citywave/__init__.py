"""citywave: random 3D cities from stochastic tessellations and Monte-Carlo
ray-traced path-loss estimation."""

from .analysis import (
    EnsembleResult,
    FitResult,
    ensemble_average,
    fit_power_law,
    street_area_fraction,
)
from .citygen import (
    Axis,
    Block,
    Building,
    CityScene,
    assemble_scene,
    assign_heights,
    blocks_from_cells,
    build_city,
    extract_axes,
    generate_buildings,
    place_antenna,
    scene_from_geojson,
    scene_to_geojson,
)
from .cli import Config, run_fit, run_generate, run_pipeline, run_trace, run_validate
from .geom import (
    ConvexPolygon,
    DirectedLine,
    Edge,
    contains,
    dilate_about_centroid,
    divide_polygon,
    erode,
    project_onto_boundary,
    regular_window,
    side_of,
    unit_area_window,
)
from .powermap import (
    AttenuationMap,
    PolarGrid,
    accumulate,
    predicted_sigma_importance,
    predicted_sigma_uniform,
    street_mask,
)
from .raytrace import (
    GroundHit,
    QuadTreeIndex,
    SourceSpec,
    TraceLimits,
    build_index,
    compile_scene,
    first_hit,
    reflect,
    sample_direction_importance,
    sample_direction_uniform,
    source_for_crown,
    trace_batch,
    trace_ray,
)
from .tessellation import (
    AnisotropyLaw,
    Cell,
    EdgeContainer,
    Tessellation,
    TessStats,
    calibrate_intensity,
    divide_cell,
    divide_tessellation,
    generate_plt,
    generate_stit,
    sample_random_line,
    summarize,
    xi,
)

__version__ = "0.1.0"
