/// Household-object nouns used as object names. Names are unique per scene.
pub const OBJECT_NOUNS: &[&str] = &[
    "armchair",
    "backpack",
    "basket",
    "bathtub",
    "bed",
    "bench",
    "bicycle",
    "blender",
    "bookshelf",
    "bottle",
    "bowl",
    "box",
    "broom",
    "bucket",
    "cabinet",
    "calendar",
    "camera",
    "candle",
    "carpet",
    "chair",
    "chandelier",
    "chest",
    "clock",
    "coatrack",
    "computer",
    "couch",
    "crate",
    "cupboard",
    "curtain",
    "cushion",
    "desk",
    "dishwasher",
    "dresser",
    "drum",
    "dryer",
    "easel",
    "fan",
    "faucet",
    "fireplace",
    "fishtank",
    "footstool",
    "fridge",
    "globe",
    "guitar",
    "hammock",
    "hamper",
    "heater",
    "helmet",
    "kettle",
    "keyboard",
    "ladder",
    "lamp",
    "lantern",
    "laptop",
    "mailbox",
    "mattress",
    "microwave",
    "mirror",
    "monitor",
    "mop",
    "nightstand",
    "ottoman",
    "oven",
    "painting",
    "pan",
    "piano",
    "pillow",
    "plant",
    "planter",
    "printer",
    "projector",
    "radiator",
    "radio",
    "recliner",
    "refrigerator",
    "rug",
    "safe",
    "scale",
    "sculpture",
    "sewingmachine",
    "shelf",
    "shoerack",
    "sink",
    "skateboard",
    "sofa",
    "speaker",
    "statue",
    "stool",
    "stove",
    "suitcase",
    "table",
    "teapot",
    "telescope",
    "television",
    "toaster",
    "toilet",
    "toolbox",
    "towel",
    "trashcan",
    "tripod",
    "trophy",
    "trunk",
    "typewriter",
    "umbrella",
    "vacuum",
    "vase",
    "wardrobe",
    "washer",
    "watercooler",
    "whiteboard",
    "workbench",
    "xylophone",
    "aquarium",
    "bookcase",
    "cradle",
    "doormat",
    "birdcage",
    "jukebox",
    "harp",
];
