//! The masked-autoencoder model: feature embeddings, transformer encoder
//! and decoder, reconstruction head, and the downstream task heads.

use hfbm_adiff::nn::{BatchNorm, Dropout, Linear, TransformerBlock};
use hfbm_adiff::{Mode, NodeId, Param, ParamModule, Rng, Scalar, Session, Tensor};
use hfbm_core::rihf::{RIGF_DIM, RILF_DIM};

use crate::config::{ModelConfig, SEG_LABEL_DIM};
use crate::features::{FullBatch, PretrainBatch};

const HEAD_DROPOUT: f64 = 0.1;

/// Widths of the pointwise token MLP before the final projection.
const TOKEN_HIDDEN: [usize; 2] = [64, 128];
/// Hidden width of the position embedding.
const POS_HIDDEN: usize = 128;
/// Transformer blocks applied at widened width inside the segmentation head.
const SEG_BLOCKS: usize = 2;

pub struct MaeModel<T: Scalar> {
    pub config: ModelConfig,
    token_lin1: Linear<T>,
    token_bn1: BatchNorm<T>,
    token_lin2: Linear<T>,
    token_bn2: BatchNorm<T>,
    token_lin3: Linear<T>,
    token_bn3: BatchNorm<T>,
    pos_lift: Linear<T>,
    pos_project: Linear<T>,
    encoder: Vec<TransformerBlock<T>>,
    decoder: Vec<TransformerBlock<T>>,
    mask_token: Param<T>,
    recon_head: Linear<T>,
    cls_fc1: Linear<T>,
    cls_bn1: BatchNorm<T>,
    cls_fc2: Linear<T>,
    cls_bn2: BatchNorm<T>,
    cls_out: Linear<T>,
    seg_widen: Linear<T>,
    seg_blocks: Vec<TransformerBlock<T>>,
    seg_label: Linear<T>,
    seg_fc1: Linear<T>,
    seg_bn1: BatchNorm<T>,
    seg_fc2: Linear<T>,
    seg_bn2: BatchNorm<T>,
    seg_out: Linear<T>,
    dropout: Dropout,
}

impl<T: Scalar> MaeModel<T> {
    /// Build a freshly initialized model. The same (config, seed) always
    /// produces bitwise-identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        config.validate().expect("invalid model config");
        let mut rng = Rng::new(seed);
        let d = config.embed_dim;
        let [h1, h2] = TOKEN_HIDDEN;
        let token_lin1 = Linear::new("token.lin1", RILF_DIM, h1, &mut rng);
        let token_bn1 = BatchNorm::new("token.bn1", h1);
        let token_lin2 = Linear::new("token.lin2", h1, h2, &mut rng);
        let token_bn2 = BatchNorm::new("token.bn2", h2);
        let token_lin3 = Linear::new("token.lin3", h2, d, &mut rng);
        let token_bn3 = BatchNorm::new("token.bn3", d);
        let pos_lift = Linear::new("pos.lift", RIGF_DIM, POS_HIDDEN, &mut rng);
        let pos_project = Linear::new("pos.project", POS_HIDDEN, d, &mut rng);
        let encoder = (0..config.encoder_blocks)
            .map(|i| TransformerBlock::new(&format!("enc.{i}"), d, config.heads, &mut rng))
            .collect();
        let decoder = (0..config.decoder_blocks)
            .map(|i| TransformerBlock::new(&format!("dec.{i}"), d, config.heads, &mut rng))
            .collect();
        let mask_values: Vec<T> = (0..d).map(|_| T::from_f64(0.02 * rng.normal())).collect();
        let mask_token = Param::new("mask_token", Tensor::new(vec![1, d], mask_values));
        let recon_head =
            Linear::new("recon", d, config.points_per_patch * 3, &mut rng);
        let (c1, c2) = config.cls_hidden();
        let cls_fc1 = Linear::new("cls.fc1", config.d_global(), c1, &mut rng);
        let cls_bn1 = BatchNorm::new("cls.bn1", c1);
        let cls_fc2 = Linear::new("cls.fc2", c1, c2, &mut rng);
        let cls_bn2 = BatchNorm::new("cls.bn2", c2);
        let cls_out = Linear::new("cls.out", c2, config.cls_dim, &mut rng);
        let wide = config.d_wide();
        let seg_widen = Linear::new("seg.widen", d, wide, &mut rng);
        let seg_blocks = (0..SEG_BLOCKS)
            .map(|i| TransformerBlock::new(&format!("seg.blk.{i}"), wide, config.heads, &mut rng))
            .collect();
        let seg_label = Linear::new("seg.label", config.cls_dim, SEG_LABEL_DIM, &mut rng);
        let (s1, s2) = config.seg_hidden();
        let seg_fc1 = Linear::new("seg.fc1", config.seg_concat_dim(), s1, &mut rng);
        let seg_bn1 = BatchNorm::new("seg.bn1", s1);
        let seg_fc2 = Linear::new("seg.fc2", s1, s2, &mut rng);
        let seg_bn2 = BatchNorm::new("seg.bn2", s2);
        let seg_out = Linear::new("seg.out", s2, config.seg_dim, &mut rng);
        Self {
            config,
            token_lin1,
            token_bn1,
            token_lin2,
            token_bn2,
            token_lin3,
            token_bn3,
            pos_lift,
            pos_project,
            encoder,
            decoder,
            mask_token,
            recon_head,
            cls_fc1,
            cls_bn1,
            cls_fc2,
            cls_bn2,
            cls_out,
            seg_widen,
            seg_blocks,
            seg_label,
            seg_fc1,
            seg_bn1,
            seg_fc2,
            seg_bn2,
            seg_out,
            dropout: Dropout::new(HEAD_DROPOUT),
        }
    }

    /// Per-patch tokens from local features: a shared pointwise MLP over
    /// every (patch, point) row, then a max over the point axis. `backbone`
    /// controls the batch-norm path so a frozen backbone can stay in eval
    /// statistics inside a training session.
    ///
    /// rilf [B, N_p, K, 8] -> [B, N_p, D].
    pub fn embed_tokens(&self, s: &mut Session<T>, rilf: NodeId, backbone: Mode) -> NodeId {
        let mut h = self.token_lin1.forward(s, rilf);
        h = self.token_bn1.forward_mode(s, h, backbone);
        h = s.graph.relu(h);
        h = self.token_lin2.forward(s, h);
        h = self.token_bn2.forward_mode(s, h, backbone);
        h = s.graph.relu(h);
        h = self.token_lin3.forward(s, h);
        h = self.token_bn3.forward_mode(s, h, backbone);
        h = s.graph.relu(h);
        s.graph.max_over_axis(h, 2)
    }

    /// Position embeddings from per-patch global features.
    ///
    /// rigf [B, N_p, 5] -> [B, N_p, D].
    pub fn embed_positions(&self, s: &mut Session<T>, rigf: NodeId) -> NodeId {
        let h = self.pos_lift.forward(s, rigf);
        let h = s.graph.gelu(h);
        self.pos_project.forward(s, h)
    }

    /// Encoder outputs after every block. Position embeddings are re-added
    /// at the input of each block, so depth never washes out the geometry.
    pub fn encode_collect(
        &self,
        s: &mut Session<T>,
        tokens: NodeId,
        positions: NodeId,
    ) -> Vec<NodeId> {
        let mut outputs = Vec::with_capacity(self.encoder.len());
        let mut h = tokens;
        for block in &self.encoder {
            let with_pos = s.graph.add(h, positions);
            h = block.forward(s, with_pos);
            outputs.push(h);
        }
        outputs
    }

    /// Final encoder output only.
    pub fn encode(&self, s: &mut Session<T>, tokens: NodeId, positions: NodeId) -> NodeId {
        *self
            .encode_collect(s, tokens, positions)
            .last()
            .expect("encoder has at least one block")
    }

    /// Decode visible latents plus duplicated mask tokens into coordinates
    /// for the masked patches.
    ///
    /// latent [B, N_v, D], positions_all [B, N_p, D] with rows ordered
    /// visible-then-masked -> [B, N_m, K, 3].
    pub fn reconstruct(
        &self,
        s: &mut Session<T>,
        latent: NodeId,
        positions_all: NodeId,
    ) -> NodeId {
        let d = self.config.embed_dim;
        let bsz = s.value(latent).shape()[0];
        let n_visible = s.value(latent).shape()[1];
        let n_patches = s.value(positions_all).shape()[1];
        let n_masked = n_patches - n_visible;

        let mask_leaf = s.bind(&self.mask_token);
        let copies = s.graph.index_select(mask_leaf, 0, &vec![0; bsz * n_masked]);
        let mask_rows = s.graph.reshape(copies, &[bsz, n_masked, d]);
        let seq = s.graph.concat(1, &[latent, mask_rows]);
        let mut h = s.graph.add(seq, positions_all);
        for block in &self.decoder {
            h = block.forward(s, h);
        }
        let masked = s.graph.narrow(h, 1, n_visible, n_masked);
        let coords = self.recon_head.forward(s, masked);
        s.graph.reshape(coords, &[bsz, n_masked, self.config.points_per_patch, 3])
    }

    /// Mean Chamfer distance between the reconstructed masked portion of
    /// each cloud and its aligned ground truth. The masked patches of one
    /// cloud form a single point set on both sides, so the loss scores the
    /// restored geometry without caring which patch predicted which region;
    /// under symmetric shapes a per-patch pairing would be ill-posed.
    pub fn pretrain_loss(&self, s: &mut Session<T>, batch: &PretrainBatch<T>) -> NodeId {
        let (nv, nm) = (batch.n_visible, batch.n_masked);
        let bsz = batch.rilf.shape()[0];
        let k = self.config.points_per_patch;
        let rilf = s.constant(batch.rilf.clone());
        let rigf = s.constant(batch.rigf.clone());
        let backbone = s.mode();
        let tokens = self.embed_tokens(s, rilf, backbone);
        let positions = self.embed_positions(s, rigf);
        let vis_tokens = s.graph.narrow(tokens, 1, 0, nv);
        let vis_pos = s.graph.narrow(positions, 1, 0, nv);
        let latent = self.encode(s, vis_tokens, vis_pos);
        let pred = self.reconstruct(s, latent, positions);
        let groups = s.graph.reshape(pred, &[bsz, nm * k, 3]);
        let targets = batch.targets.clone().reshaped(vec![bsz, nm * k, 3]);
        s.graph.chamfer_batch(groups, &targets)
    }

    /// Sequence summary for probing: elementwise max over patches plus
    /// elementwise mean over patches.
    ///
    /// tokens [B, N_p, D] -> [B, D].
    pub fn global_feature(&self, s: &mut Session<T>, tokens: NodeId) -> NodeId {
        let mx = s.graph.max_over_axis(tokens, 1);
        let mean = s.graph.mean_over_axis(tokens, 1);
        s.graph.add(mx, mean)
    }

    /// Class logits from the concatenation of every encoder block's output,
    /// averaged over patches.
    pub fn classify(&self, s: &mut Session<T>, block_outputs: &[NodeId]) -> NodeId {
        assert_eq!(block_outputs.len(), self.config.encoder_blocks);
        let cat = s.graph.concat(2, block_outputs);
        let pooled = s.graph.mean_over_axis(cat, 1);
        let mut h = self.cls_fc1.forward(s, pooled);
        h = self.dropout.forward(s, h);
        h = s.graph.relu(h);
        h = self.cls_bn1.forward(s, h);
        h = self.cls_fc2.forward(s, h);
        h = self.dropout.forward(s, h);
        h = s.graph.relu(h);
        h = self.cls_bn2.forward(s, h);
        self.cls_out.forward(s, h)
    }

    /// Embed a full (unmasked) batch and return every encoder block output.
    pub fn forward_blocks(
        &self,
        s: &mut Session<T>,
        batch: &FullBatch<T>,
        backbone: Mode,
    ) -> Vec<NodeId> {
        let rilf = s.constant(batch.rilf.clone());
        let rigf = s.constant(batch.rigf.clone());
        let tokens = self.embed_tokens(s, rilf, backbone);
        let positions = self.embed_positions(s, rigf);
        self.encode_collect(s, tokens, positions)
    }

    /// Class logits for a full batch.
    pub fn classify_batch(&self, s: &mut Session<T>, batch: &FullBatch<T>, backbone: Mode) -> NodeId {
        let blocks = self.forward_blocks(s, batch, backbone);
        self.classify(s, &blocks)
    }

    /// Per-point part logits.
    ///
    /// tokens [B, N_p, D] from the encoder, one-hot class labels
    /// [B, cls_dim], and for every cloud the patch index of each point.
    /// Every cloud must have the same point count. -> [B, P, seg_dim].
    pub fn segment(
        &self,
        s: &mut Session<T>,
        tokens: NodeId,
        class_onehot: &Tensor<T>,
        assignment: &[Vec<usize>],
    ) -> NodeId {
        let bsz = s.value(tokens).shape()[0];
        assert_eq!(assignment.len(), bsz, "one assignment row per cloud");
        let p = assignment.first().map_or(0, Vec::len);
        assert!(p > 0 && assignment.iter().all(|a| a.len() == p), "equal point counts");
        assert_eq!(class_onehot.shape(), &[bsz, self.config.cls_dim]);

        let mut wide = self.seg_widen.forward(s, tokens);
        for block in &self.seg_blocks {
            wide = block.forward(s, wide);
        }
        let d_wide = self.config.d_wide();
        let per_point = s.graph.gather_per_batch(wide, assignment);
        let global = s.graph.max_over_axis(wide, 1);
        let global = s.graph.reshape(global, &[bsz, 1, d_wide]);
        let global = s.graph.index_select(global, 1, &vec![0; p]);
        let labels = s.constant(class_onehot.clone());
        let label_feat = self.seg_label.forward(s, labels);
        let label_feat = s.graph.reshape(label_feat, &[bsz, 1, SEG_LABEL_DIM]);
        let label_feat = s.graph.index_select(label_feat, 1, &vec![0; p]);
        let cat = s.graph.concat(2, &[per_point, global, label_feat]);

        let mut h = self.seg_fc1.forward(s, cat);
        h = self.seg_bn1.forward(s, h);
        h = s.graph.relu(h);
        h = self.dropout.forward(s, h);
        h = self.seg_fc2.forward(s, h);
        h = self.seg_bn2.forward(s, h);
        h = s.graph.relu(h);
        h = self.dropout.forward(s, h);
        self.seg_out.forward(s, h)
    }

    /// Frozen-feature vectors for a batch of clouds, one row per cloud.
    /// Runs its own eval session; nothing in the model changes.
    pub fn global_feature_rows(&self, batch: &FullBatch<T>) -> Vec<Vec<f64>> {
        let mut s = Session::new(Mode::Eval, 0);
        let blocks = self.forward_blocks(&mut s, batch, Mode::Eval);
        let last = *blocks.last().expect("encoder has blocks");
        let feat = self.global_feature(&mut s, last);
        let value = s.value(feat);
        let d = value.shape()[1];
        value
            .to_f64_vec()
            .chunks(d)
            .map(|row| row.to_vec())
            .collect()
    }

    /// One-hot encoding helper for class labels.
    pub fn one_hot(labels: &[usize], n_classes: usize) -> Tensor<T> {
        let mut data = vec![T::ZERO; labels.len() * n_classes];
        for (i, &l) in labels.iter().enumerate() {
            assert!(l < n_classes, "label {l} out of range for {n_classes} classes");
            data[i * n_classes + l] = T::ONE;
        }
        Tensor::new(vec![labels.len(), n_classes], data)
    }
}

impl<T: Scalar> ParamModule<T> for MaeModel<T> {
    fn visit_tensors(&self, f: &mut dyn FnMut(&str, hfbm_adiff::TensorRole, &Tensor<T>)) {
        self.token_lin1.visit_tensors(f);
        self.token_bn1.visit_tensors(f);
        self.token_lin2.visit_tensors(f);
        self.token_bn2.visit_tensors(f);
        self.token_lin3.visit_tensors(f);
        self.token_bn3.visit_tensors(f);
        self.pos_lift.visit_tensors(f);
        self.pos_project.visit_tensors(f);
        for b in &self.encoder {
            b.visit_tensors(f);
        }
        for b in &self.decoder {
            b.visit_tensors(f);
        }
        f(&self.mask_token.name, hfbm_adiff::TensorRole::Trainable, &self.mask_token.value);
        self.recon_head.visit_tensors(f);
        self.cls_fc1.visit_tensors(f);
        self.cls_bn1.visit_tensors(f);
        self.cls_fc2.visit_tensors(f);
        self.cls_bn2.visit_tensors(f);
        self.cls_out.visit_tensors(f);
        self.seg_widen.visit_tensors(f);
        for b in &self.seg_blocks {
            b.visit_tensors(f);
        }
        self.seg_label.visit_tensors(f);
        self.seg_fc1.visit_tensors(f);
        self.seg_bn1.visit_tensors(f);
        self.seg_fc2.visit_tensors(f);
        self.seg_bn2.visit_tensors(f);
        self.seg_out.visit_tensors(f);
    }

    fn visit_tensors_mut(&mut self, f: &mut dyn FnMut(&str, hfbm_adiff::TensorRole, &mut Tensor<T>)) {
        self.token_lin1.visit_tensors_mut(f);
        self.token_bn1.visit_tensors_mut(f);
        self.token_lin2.visit_tensors_mut(f);
        self.token_bn2.visit_tensors_mut(f);
        self.token_lin3.visit_tensors_mut(f);
        self.token_bn3.visit_tensors_mut(f);
        self.pos_lift.visit_tensors_mut(f);
        self.pos_project.visit_tensors_mut(f);
        for b in &mut self.encoder {
            b.visit_tensors_mut(f);
        }
        for b in &mut self.decoder {
            b.visit_tensors_mut(f);
        }
        f(&self.mask_token.name, hfbm_adiff::TensorRole::Trainable, &mut self.mask_token.value);
        self.recon_head.visit_tensors_mut(f);
        self.cls_fc1.visit_tensors_mut(f);
        self.cls_bn1.visit_tensors_mut(f);
        self.cls_fc2.visit_tensors_mut(f);
        self.cls_bn2.visit_tensors_mut(f);
        self.cls_out.visit_tensors_mut(f);
        self.seg_widen.visit_tensors_mut(f);
        for b in &mut self.seg_blocks {
            b.visit_tensors_mut(f);
        }
        self.seg_label.visit_tensors_mut(f);
        self.seg_fc1.visit_tensors_mut(f);
        self.seg_bn1.visit_tensors_mut(f);
        self.seg_fc2.visit_tensors_mut(f);
        self.seg_bn2.visit_tensors_mut(f);
        self.seg_out.visit_tensors_mut(f);
    }
}
