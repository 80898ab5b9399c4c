//! Alternating discriminator/generator optimization, checkpoints and logs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{ParamKey, Tape, Var};
use crate::error::{Result, StganError};
use crate::ingest::{PairedWindow, PatchDataset};
use crate::losses::{self, LossRecord};
use crate::networks::{Norm, PatchDiscriminator, UNet, UNetSpec};
use crate::tensor::Tensor;
use crate::types::TrainConfig;

pub const G_S: usize = 0;
pub const F_S: usize = 1;
pub const G_T: usize = 2;
pub const F_T: usize = 3;
pub const D_G: usize = 4;
pub const D_F: usize = 5;
pub const NETWORK_NAMES: [&str; 6] = ["G_s", "F_s", "G_t", "F_t", "D_G", "D_F"];

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STGANCKP";
pub const FORMAT_VERSION: u32 = 1;
pub const ADAM_BETA1: f64 = 0.5;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Number of recent loss records kept in the bundle and its checkpoints.
pub const LOSS_TAIL: usize = 100;

/// First and second Adam moments for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Moments {
    fn zeros_like(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Moments {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Sampler position: the batch order is a pure function of these two.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

/// The six networks, their optimizer state and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: TrainConfig,
    pub g_s: UNet,
    pub f_s: UNet,
    pub g_t: UNet,
    pub f_t: UNet,
    pub d_g: PatchDiscriminator,
    pub d_f: PatchDiscriminator,
    pub optimizer: [Moments; 6],
    pub step: u64,
    pub loss_tail: Vec<LossRecord>,
}

impl ModelBundle {
    /// Freshly initialized networks for `config`.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let (d, w, seed) = (config.gen_depth, config.gen_width, config.seed);
        let d_in = if config.conditional_discriminator { 2 } else { 1 };
        let g_s = UNet::new(UNetSpec::spatial(d, w), G_S, seed);
        let f_s = UNet::new(UNetSpec::spatial(d, w), F_S, seed);
        let g_t = UNet::new(UNetSpec::temporal(config.tau, d, w), G_T, seed);
        let f_t = UNet::new(UNetSpec::temporal(config.tau, d, w), F_T, seed);
        let d_g = PatchDiscriminator::new(d_in, config.disc_width, Norm::Instance, D_G, seed);
        let d_f = PatchDiscriminator::new(d_in, config.disc_width, Norm::Instance, D_F, seed);
        let optimizer = [
            Moments::zeros_like(g_s.params()),
            Moments::zeros_like(f_s.params()),
            Moments::zeros_like(g_t.params()),
            Moments::zeros_like(f_t.params()),
            Moments::zeros_like(d_g.params()),
            Moments::zeros_like(d_f.params()),
        ];
        Ok(ModelBundle {
            config: config.clone(),
            g_s,
            f_s,
            g_t,
            f_t,
            d_g,
            d_f,
            optimizer,
            step: 0,
            loss_tail: Vec::new(),
        })
    }

    pub fn config_digest(&self) -> String {
        self.config.digest()
    }

    pub fn rng_state(&self) -> RngState {
        RngState {
            seed: self.config.seed,
            step: self.step,
        }
    }

    /// Parameter tensors of network `group`.
    pub fn params(&self, group: usize) -> &[Tensor] {
        match group {
            G_S => self.g_s.params(),
            F_S => self.f_s.params(),
            G_T => self.g_t.params(),
            F_T => self.f_t.params(),
            D_G => self.d_g.params(),
            D_F => self.d_f.params(),
            _ => panic!("no network group {group}"),
        }
    }

    fn params_mut(&mut self, group: usize) -> &mut [Tensor] {
        match group {
            G_S => self.g_s.params_mut(),
            F_S => self.f_s.params_mut(),
            G_T => self.g_t.params_mut(),
            F_T => self.f_t.params_mut(),
            D_G => self.d_g.params_mut(),
            D_F => self.d_f.params_mut(),
            _ => panic!("no network group {group}"),
        }
    }
}

/// A batch of windows as `[batch * tau, 1, h, w]` tensors, window-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub u: Tensor,
    pub v: Tensor,
    pub tau: usize,
}

impl Batch {
    pub fn windows(&self) -> usize {
        self.u.n() / self.tau
    }

    pub fn from_windows(windows: &[PairedWindow]) -> Result<Batch> {
        let first = windows.first().ok_or_else(|| StganError::shape("empty batch"))?;
        let tau = first.u.len();
        let (h, w) = first.u[0].dims();
        let mut u = Vec::with_capacity(windows.len() * tau * h * w);
        let mut v = Vec::with_capacity(u.capacity());
        for win in windows {
            if win.u.len() != tau || win.v.len() != tau {
                return Err(StganError::shape("windows in a batch must share tau"));
            }
            for f in win.u.iter().chain(&win.v) {
                if f.dims() != (h, w) {
                    return Err(StganError::shape("windows in a batch must share frame size"));
                }
            }
            win.u.iter().for_each(|f| u.extend_from_slice(f.pixels()));
            win.v.iter().for_each(|f| v.extend_from_slice(f.pixels()));
        }
        let shape = [windows.len() * tau, 1, h, w];
        Ok(Batch {
            u: Tensor::from_vec(shape, u),
            v: Tensor::from_vec(shape, v),
            tau,
        })
    }

    pub fn from_dataset(ds: &PatchDataset, indices: &[usize]) -> Batch {
        let mut u = Vec::new();
        let mut v = Vec::new();
        for &i in indices {
            ds.extend_window(i, &mut u, &mut v);
        }
        let shape = [indices.len() * ds.tau, 1, ds.crop, ds.crop];
        Batch {
            u: Tensor::from_vec(shape, u),
            v: Tensor::from_vec(shape, v),
            tau: ds.tau,
        }
    }
}

/// Plane indices selecting, per window, the first `tau - 1` frames.
fn leading_planes(windows: usize, tau: usize) -> Vec<usize> {
    (0..windows).flat_map(|b| (0..tau - 1).map(move |k| b * tau + k)).collect()
}

fn last_planes(windows: usize, tau: usize) -> Vec<usize> {
    (0..windows).map(|b| b * tau + tau - 1).collect()
}

/// Discriminator input: the judged frames, preceded by the source frames
/// when the discriminator is conditional.
fn disc_input(tape: &mut Tape<'_>, conditional: bool, source: Var, judged: Var) -> Var {
    if conditional {
        tape.concat(source, judged)
    } else {
        judged
    }
}

fn adam_update(params: &mut [Tensor], moments: &mut Moments, grads: &BTreeMap<ParamKey, Tensor>, group: usize, t: u64, lr: f64) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2_sqrt = (1.0 - ADAM_BETA2.powi(t as i32)).sqrt();
    let step_size = lr / bc1;
    for (index, p) in params.iter_mut().enumerate() {
        let Some(g) = grads.get(&ParamKey { group, index }) else { continue };
        let m = moments.m[index].data_mut();
        let v = moments.v[index].data_mut();
        for (((p, m), v), g) in p.data_mut().iter_mut().zip(m).zip(v).zip(g.data()) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= step_size * *m / (v.sqrt() / bc2_sqrt + ADAM_EPS);
        }
    }
}

fn check_finite(record: &LossRecord) -> Result<()> {
    match record.first_non_finite() {
        Some(name) => Err(StganError::NanLoss(name.to_string())),
        None => Ok(()),
    }
}

/// One discriminator update then one joint generator update.
///
/// The generators run once; the discriminator step sees detached copies of
/// their outputs, and the generator step scores the same outputs with the
/// freshly updated discriminators. Returns the losses computed on the way.
pub fn train_step(bundle: &mut ModelBundle, batch: &Batch) -> Result<LossRecord> {
    let cfg = bundle.config.clone();
    let tau = cfg.tau;
    if batch.tau != tau || batch.u.shape() != batch.v.shape() || batch.u.n() % tau != 0 {
        return Err(StganError::shape(format!(
            "batch of tau {} does not fit configured tau {tau}",
            batch.tau
        )));
    }
    let n_win = batch.windows();
    let t_adam = bundle.step + 1;
    let lr = cfg.learning_rate;
    let cond = cfg.conditional_discriminator;
    let mut record = LossRecord::default();

    let ModelBundle {
        g_s,
        f_s,
        g_t,
        f_t,
        d_g,
        d_f,
        optimizer,
        ..
    } = bundle;

    let mut gt = Tape::new();
    gt.freeze_group(D_G);
    gt.freeze_group(D_F);
    let u = gt.constant(batch.u.clone());
    let v = gt.constant(batch.v.clone());
    let fake_v = g_s.forward(&mut gt, u);
    let fake_u = f_s.forward(&mut gt, v);

    // discriminator step on detached fakes
    {
        let mut dt = Tape::new();
        let (du, dv) = (dt.constant(batch.u.clone()), dt.constant(batch.v.clone()));
        let fv = dt.constant(gt.value(fake_v).clone());
        let fu = dt.constant(gt.value(fake_u).clone());
        let (real_g, fake_g) = (disc_input(&mut dt, cond, du, dv), disc_input(&mut dt, cond, du, fv));
        let (real_f, fake_f) = (disc_input(&mut dt, cond, dv, du), disc_input(&mut dt, cond, dv, fu));
        let (sr, sf) = (d_g.forward(&mut dt, real_g), d_g.forward(&mut dt, fake_g));
        let obj_g = losses::tape::discriminator(&mut dt, sr, sf, tau);
        let (sr, sf) = (d_f.forward(&mut dt, real_f), d_f.forward(&mut dt, fake_f));
        let obj_f = losses::tape::discriminator(&mut dt, sr, sf, tau);
        record.d_g = dt.scalar(obj_g);
        record.d_f = dt.scalar(obj_f);
        check_finite(&record)?;
        let loss = dt.linear(&[(obj_g, -1.0), (obj_f, -1.0)]);
        let grads = dt.backward(loss).into_params();
        drop(dt);
        adam_update(d_g.params_mut(), &mut optimizer[D_G], &grads, D_G, t_adam, lr);
        adam_update(d_f.params_mut(), &mut optimizer[D_F], &grads, D_F, t_adam, lr);
    }

    // generator step
    let judged_g = disc_input(&mut gt, cond, u, fake_v);
    let judged_f = disc_input(&mut gt, cond, v, fake_u);
    let sg = d_g.forward(&mut gt, judged_g);
    let sf = d_f.forward(&mut gt, judged_f);
    let adv_gs = losses::tape::generator_adv(&mut gt, sg, tau);
    let adv_fs = losses::tape::generator_adv(&mut gt, sf, tau);
    let l1_gs = losses::tape::spatial_l1(&mut gt, fake_v, v, tau);
    let l1_fs = losses::tape::spatial_l1(&mut gt, fake_u, u, tau);
    let mut terms = vec![(adv_gs, 1.0), (adv_fs, 1.0), (l1_gs, cfg.lambda_s), (l1_fs, cfg.lambda_s)];
    record.adv_gs = gt.scalar(adv_gs);
    record.adv_fs = gt.scalar(adv_fs);
    record.l1_gs = gt.scalar(l1_gs);
    record.l1_fs = gt.scalar(l1_fs);

    if !cfg.spatial_only {
        let (lead, last) = (leading_planes(n_win, tau), last_planes(n_win, tau));
        let pick = |tape: &mut Tape<'_>, x: Var, last_only: bool| {
            if last_only {
                tape.gather(x, last.clone(), n_win, 1)
            } else {
                tape.gather(x, lead.clone(), n_win, tau - 1)
            }
        };
        let (v_lead, v_last) = (pick(&mut gt, v, false), pick(&mut gt, v, true));
        let (u_lead, u_last) = (pick(&mut gt, u, false), pick(&mut gt, u, true));
        let fv_lead = pick(&mut gt, fake_v, false);
        let fu_lead = pick(&mut gt, fake_u, false);

        let p = g_t.forward(&mut gt, v_lead);
        let lt_gt = losses::tape::temporal(&mut gt, p, v_last);
        let p = f_t.forward(&mut gt, u_lead);
        let lt_ft = losses::tape::temporal(&mut gt, p, u_last);
        let p = g_t.forward(&mut gt, fv_lead);
        let lts_gtgs = losses::tape::temporal(&mut gt, p, v_last);
        let p = f_t.forward(&mut gt, fu_lead);
        let lts_ftfs = losses::tape::temporal(&mut gt, p, u_last);
        for var in [lt_gt, lt_ft, lts_gtgs, lts_ftfs] {
            terms.push((var, cfg.lambda_t));
        }
        record.lt_gt = gt.scalar(lt_gt);
        record.lt_ft = gt.scalar(lt_ft);
        record.lts_gtgs = gt.scalar(lts_gtgs);
        record.lts_ftfs = gt.scalar(lts_ftfs);
    }
    record.total_generator = losses::full_generator_objective(&record.components(), cfg.lambda_s, cfg.lambda_t)?;
    check_finite(&record)?;
    let total = gt.linear(&terms);
    let grads = gt.backward(total).into_params();
    drop(gt);

    let generators: &[usize] = if cfg.spatial_only { &[G_S, F_S] } else { &[G_S, F_S, G_T, F_T] };
    for &g in generators {
        let mut moments = std::mem::replace(&mut bundle.optimizer[g], Moments { m: vec![], v: vec![] });
        adam_update(bundle.params_mut(g), &mut moments, &grads, g, t_adam, lr);
        bundle.optimizer[g] = moments;
    }
    bundle.step += 1;
    bundle.loss_tail.push(record);
    if bundle.loss_tail.len() > LOSS_TAIL {
        bundle.loss_tail.remove(0);
    }
    Ok(record)
}

/// Seeded batch order: each epoch is a fresh permutation of the dataset
/// derived from `(seed, epoch)`, so any step's batch is reproducible.
#[derive(Clone, Debug)]
pub struct Sampler {
    seed: u64,
    len: usize,
    batch_size: usize,
    cached: Option<(u64, Vec<usize>)>,
}

impl Sampler {
    pub fn new(seed: u64, len: usize, batch_size: usize) -> Self {
        assert!(len > 0, "sampler over an empty dataset");
        Sampler {
            seed,
            len,
            batch_size,
            cached: None,
        }
    }

    fn permutation(&mut self, epoch: u64) -> &[usize] {
        if self.cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch);
            let mut perm: Vec<usize> = (0..self.len).collect();
            perm.shuffle(&mut rng);
            self.cached = Some((epoch, perm));
        }
        &self.cached.as_ref().expect("just filled").1
    }

    pub fn batch(&mut self, step: u64) -> Vec<usize> {
        let start = step * self.batch_size as u64;
        (start..start + self.batch_size as u64)
            .map(|k| {
                let (epoch, pos) = (k / self.len as u64, (k % self.len as u64) as usize);
                self.permutation(epoch)[pos]
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory for the loss log and checkpoints; nothing is written if unset.
    pub out_dir: Option<PathBuf>,
    /// Print a progress line every `log_every` steps.
    pub progress: bool,
}

pub const LOSS_LOG: &str = "losses.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:07}.ckpt")
}

fn loss_log_header() -> String {
    format!("step,{}\n", LossRecord::FIELDS.join(","))
}

fn loss_log_row(step: u64, r: &LossRecord) -> String {
    let values: Vec<String> = r.values().iter().map(|v| format!("{v:e}")).collect();
    format!("{step},{}\n", values.join(","))
}

/// Parses a loss log back into `(step, record)` rows.
pub fn read_loss_log(path: &Path) -> Result<Vec<(u64, LossRecord)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = || StganError::config("loss_log", format!("malformed row {}", n + 1));
        let mut cells = line.split(',');
        let step: u64 = cells.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let mut values = [0.0; 11];
        for slot in values.iter_mut() {
            *slot = cells.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        }
        rows.push((step, LossRecord::from_values(values)));
    }
    Ok(rows)
}

/// Opens the loss log for appending, dropping rows past the bundle's step
/// so a resumed run continues the log cleanly.
fn open_loss_log(path: &Path, step: u64) -> Result<fs::File> {
    let mut kept = loss_log_header();
    if step > 0 && path.exists() {
        for (s, r) in read_loss_log(path)? {
            if s <= step {
                kept.push_str(&loss_log_row(s, &r));
            }
        }
    }
    fs::write(path, kept)?;
    Ok(fs::OpenOptions::new().append(true).open(path)?)
}

/// Runs training until `bundle.step == config.steps`. Works for fresh and
/// resumed bundles alike since the batch order depends only on the step.
pub fn train(bundle: &mut ModelBundle, dataset: &PatchDataset, opts: &TrainOptions) -> Result<Vec<LossRecord>> {
    let cfg = bundle.config.clone();
    if dataset.is_empty() {
        return Err(StganError::config("n_train", "training set is empty"));
    }
    if dataset.tau != cfg.tau {
        return Err(StganError::ConfigMismatch(format!(
            "dataset tau {} differs from configured tau {}",
            dataset.tau, cfg.tau
        )));
    }
    let mut log = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(open_loss_log(&dir.join(LOSS_LOG), bundle.step)?)
        }
        None => None,
    };
    let mut sampler = Sampler::new(cfg.seed, dataset.len(), cfg.batch_size);
    let mut records = Vec::new();
    while bundle.step < cfg.steps {
        let batch = Batch::from_dataset(dataset, &sampler.batch(bundle.step));
        let record = train_step(bundle, &batch)?;
        records.push(record);
        let step = bundle.step;
        if let Some(f) = log.as_mut() {
            f.write_all(loss_log_row(step, &record).as_bytes())?;
        }
        if opts.progress && cfg.log_every > 0 && step % cfg.log_every == 0 {
            println!(
                "step {step}/{} total_generator={:.4} d_g={:.4} d_f={:.4} l1_gs={:.4} l1_fs={:.4}",
                cfg.steps, record.total_generator, record.d_g, record.d_f, record.l1_gs, record.l1_fs
            );
        }
        if let Some(dir) = &opts.out_dir {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps {
                save_checkpoint(bundle, &dir.join(checkpoint_name(step)))?;
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        save_checkpoint(bundle, &dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(records)
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    config_digest: String,
    step: u64,
    rng: RngState,
    loss_tail: Vec<LossRecord>,
    /// Parameter shapes per network, in group order.
    shapes: Vec<Vec<[usize; 4]>>,
}

/// Serializes the bundle: magic, version, JSON header, little-endian f64
/// parameter and moment blobs, then a SHA-256 of everything before it.
pub fn checkpoint_bytes(bundle: &ModelBundle) -> Vec<u8> {
    let header = Header {
        config: bundle.config.clone(),
        config_digest: bundle.config_digest(),
        step: bundle.step,
        rng: bundle.rng_state(),
        loss_tail: bundle.loss_tail.clone(),
        shapes: (0..6).map(|g| bundle.params(g).iter().map(Tensor::shape).collect()).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for g in 0..6 {
        let moments = &bundle.optimizer[g];
        for t in bundle.params(g).iter().chain(&moments.m).chain(&moments.v) {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint(bundle: &ModelBundle, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, checkpoint_bytes(bundle))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Hex SHA-256 of a file's bytes, used to identify checkpoints in manifests.
pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn corrupt(msg: impl Into<String>) -> StganError {
    StganError::CorruptFile(msg.into())
}

pub fn bundle_from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    let fixed = CHECKPOINT_MAGIC.len() + 4 + 8;
    if bytes.len() < fixed + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checkpoint digest mismatch"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(StganError::VersionMismatch(format!(
            "checkpoint format {version}, expected {FORMAT_VERSION}"
        )));
    }
    let json_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let json = body.get(fixed..fixed + json_len).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(format!("bad header: {e}")))?;
    let mut bundle = ModelBundle::new(&header.config).map_err(|e| corrupt(format!("bad config: {e}")))?;
    if header.shapes.len() != 6 {
        return Err(corrupt("expected six networks"));
    }
    let mut cursor = &body[fixed + json_len..];
    let mut take = |shape: [usize; 4]| -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if cursor.len() < 8 * n {
            return Err(corrupt("truncated parameter blob"));
        }
        let (head, rest) = cursor.split_at(8 * n);
        cursor = rest;
        let data = head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Tensor::from_vec(shape, data))
    };
    for (g, shapes) in header.shapes.iter().enumerate() {
        if bundle.params(g).len() != shapes.len()
            || bundle.params(g).iter().zip(shapes).any(|(p, s)| p.shape() != *s)
        {
            return Err(corrupt(format!("{} shapes disagree with the config", NETWORK_NAMES[g])));
        }
        let params = shapes.iter().map(|s| take(*s)).collect::<Result<Vec<_>>>()?;
        let m = shapes.iter().map(|s| take(*s)).collect::<Result<Vec<_>>>()?;
        let v = shapes.iter().map(|s| take(*s)).collect::<Result<Vec<_>>>()?;
        bundle.params_mut(g).clone_from_slice(&params);
        bundle.optimizer[g] = Moments { m, v };
    }
    if !cursor.is_empty() {
        return Err(corrupt("trailing bytes after parameter blobs"));
    }
    bundle.step = header.step;
    bundle.loss_tail = header.loss_tail;
    Ok(bundle)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    bundle_from_bytes(&fs::read(path)?)
}

/// Loads a checkpoint and checks that its architecture matches `cfg`.
pub fn load_checkpoint_for(path: &Path, cfg: &TrainConfig) -> Result<ModelBundle> {
    let bundle = load_checkpoint(path)?;
    let c = &bundle.config;
    let checks: [(&str, bool); 5] = [
        ("tau", c.tau == cfg.tau),
        ("gen_depth", c.gen_depth == cfg.gen_depth),
        ("gen_width", c.gen_width == cfg.gen_width),
        ("disc_width", c.disc_width == cfg.disc_width),
        ("conditional_discriminator", c.conditional_discriminator == cfg.conditional_discriminator),
    ];
    if let Some((key, _)) = checks.iter().find(|(_, ok)| !ok) {
        return Err(StganError::VersionMismatch(format!(
            "checkpoint {key} differs from the requested configuration"
        )));
    }
    Ok(bundle)
}
