"""mesomacro: hybrid mesoscopic-macroscopic traffic simulation.

Three interoperable vehicle-flow models (cell transmission, link
transmission, regional bathtub) advance packets over a partitioned road
network; junctions and connectors move packets between them with seeded
random merging and exact fractional splitting.
"""

from .bathtub import RegionState, bathtub_exit_capacity, bathtub_speed, bathtub_step
from .ctm import CtmLinkState, ctm_receiving, ctm_sending, ctm_step
from .demand import (OdRecord, Path, VehiclePacket, assign_aon,
                     assign_incremental, load_demand, load_paths,
                     project_to_regions, shortest_path, split_packet,
                     write_paths)
from .engine import (MODEL_BATHTUB, MODEL_CTM, MODEL_LTM, Simulation,
                     SimulationConfig, StepMetrics, Summary, initialize)
from .errors import (InputError, MesoMacroError, NoPathError, OutputError,
                     SimulationAssertionError)
from .ltm import LtmLinkState, ltm_receiving, ltm_sending, ltm_step
from .network import (Link, Node, Region, RoadNetwork, UnderwoodMfd,
                      calibrate_underwood, load_mfds, load_network,
                      load_regions, write_mfds, write_regions)
from .output import export_geojson, make_recorders, write_outputs
from .partition import leiden_communities, modularity, partition_network
from .transfer import (Junction, TripCompletion, detect_gridlock,
                       transfer_step, vehicle_arrival)

__version__ = "0.1.0"
