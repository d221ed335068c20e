//! Minimal CPU neural-network stack: tensors, layers, ADAM and training.

mod checkpoint;
mod init;
mod layers;
mod loss;
mod network;
mod optim;
mod tensor;
mod train;

pub use checkpoint::{
    checkpoint_id, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION,
    MAGIC,
};
pub use init::{glorot_limit, glorot_uniform, glorot_uniform_seeded};
pub use layers::{
    conv2d_backward, conv2d_forward, conv_output_len, dense_backward, dense_forward, leaky_relu_backward,
    leaky_relu_forward, maxpool_backward, maxpool_forward, ConvGrads, DenseGrads,
};
pub use loss::{softmax, softmax_cross_entropy};
pub use network::{
    build_simplenet, image_to_input, simplenet_specs, layer_names, ActShape, Classifier, Gradients, Layer, LayerSpec, Network,
    Params, SimpleNetPlan, MIN_SIMPLENET_CANVAS,
};
pub use optim::{adam_update, AdamConfig, OptimizerState};
pub use tensor::Tensor;
pub use train::{
    argmax, batch_gradients, evaluate, train, Dataset, EpochLog, PlateauTracker, ScheduleMode, StagedSchedule,
    TrainConfig, TrainOutcome, FINAL_STAGE,
};
