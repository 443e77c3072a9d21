//! C ABI over the reconstruction pipeline.
//!
//! Every function returns an [`EvrStatus`]; on failure a message is available
//! from [`evr_last_error`] on the same thread. Objects are opaque handles
//! created by `*_new`/`*_load` functions and released with the matching
//! `*_free`. Arrays are dense, row-major and caller-allocated.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use candle_core::{DType, Device};
use evrgbhand::cli_io::{image_tensor, prediction_arrays};
use evrgbhand::event_core::{stack_events, Event, EventStream, Polarity, SensorSize};
use evrgbhand::fusion_net::{load_checkpoint, FusionNet, StepInput, StreamState};
use evrgbhand::hand_model::{make_desk_model, mano_forward, HandModelData, ManoParams, NUM_BETAS, NUM_JOINTS, NUM_POSE_PARAMS, NUM_VERTICES};
use evrgbhand::{eval_metrics, Error, Image};
use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvrStatus {
    Ok = 0,
    InvalidArgument = 1,
    Data = 2,
    Numerical = 3,
    Shape = 4,
    Io = 5,
    NullPointer = 6,
    Panic = 7,
}

/// Opaque hand model.
pub struct EvrHandModel(HandModelData);

/// Opaque network.
pub struct EvrNet(FusionNet);

/// Opaque per-stream recurrent state.
pub struct EvrStream(StreamState);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> EvrStatus {
    match err {
        Error::InvalidArgument(_) => EvrStatus::InvalidArgument,
        Error::Data(_) => EvrStatus::Data,
        Error::Numerical(_) | Error::Tensor(_) => EvrStatus::Numerical,
        Error::Shape(_) => EvrStatus::Shape,
        Error::Io { .. } => EvrStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EvrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            EvrStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            EvrStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            EvrStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument("path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

unsafe fn out_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn evr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Generated desk hand model for `seed`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evr_hand_model_desk(seed: u64, out: *mut *mut EvrHandModel) -> EvrStatus {
    guard(|| out_handle(out, EvrHandModel(make_desk_model(&mut ChaCha8Rng::seed_from_u64(seed)))))
}

/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evr_hand_model_load(path_: *const c_char, out: *mut *mut EvrHandModel) -> EvrStatus {
    guard(|| out_handle(out, EvrHandModel(HandModelData::load(path(path_)?)?)))
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evr_hand_model_free(model: *mut EvrHandModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Hand mesh for pose `theta[48]` and shape `beta[10]`: writes
/// `vertices[778*3]` and `joints[21*3]`, millimetres.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn evr_mano_forward(
    model: *const EvrHandModel,
    theta: *const f64,
    beta: *const f64,
    vertices: *mut f64,
    joints: *mut f64,
) -> EvrStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let params = ManoParams {
            theta: slice(theta, NUM_POSE_PARAMS, "theta")?.to_vec(),
            beta: slice(beta, NUM_BETAS, "beta")?.to_vec(),
        };
        let mesh = mano_forward(&params, &model.0)?;
        slice_mut(vertices, NUM_VERTICES * 3, "vertices")?.copy_from_slice(mesh.vertices.as_slice().expect("standard layout"));
        slice_mut(joints, NUM_JOINTS * 3, "joints")?.copy_from_slice(mesh.joints.as_slice().expect("standard layout"));
        Ok(())
    })
}

/// Stacked event frame of `n` events (sorted by time, polarity ±1) at time
/// `t`: writes `out[2*height*width]`, positive channel first.
///
/// # Safety
/// Input arrays must hold `n` elements and `out` `2*width*height`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn evr_stack_events(
    xs: *const u16,
    ys: *const u16,
    ts: *const u64,
    ps: *const i8,
    n: usize,
    width: u16,
    height: u16,
    t: u64,
    out: *mut f32,
) -> EvrStatus {
    guard(|| {
        let (xs, ys, ts, ps) = (slice(xs, n, "xs")?, slice(ys, n, "ys")?, slice(ts, n, "ts")?, slice(ps, n, "ps")?);
        let events = (0..n)
            .map(|i| Ok(Event::new(xs[i], ys[i], ts[i], Polarity::from_sign(ps[i])?)))
            .collect::<evrgbhand::Result<Vec<_>>>()?;
        let stream = EventStream::new(events, SensorSize::new(width, height))?;
        let frame = stack_events(&stream, t)?;
        let out = slice_mut(out, 2 * width as usize * height as usize, "out")?;
        out.iter_mut().zip(frame.data.iter()).for_each(|(o, v)| *o = *v);
        Ok(())
    })
}

/// Loads a network checkpoint (f32, CPU).
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evr_net_load(path_: *const c_char, out: *mut *mut EvrNet) -> EvrStatus {
    guard(|| out_handle(out, EvrNet(load_checkpoint(path(path_)?, DType::F32, &Device::Cpu)?)))
}

/// Freshly initialised desk-scale network.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evr_net_new_desk(model: *const EvrHandModel, seed: u64, out: *mut *mut EvrNet) -> EvrStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let cfg = evrgbhand::fusion_net::NetworkConfig::desk();
        out_handle(out, EvrNet(FusionNet::new(cfg, &model.0.upsample_matrix, seed, DType::F32, &Device::Cpu)?))
    })
}

/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evr_net_free(net: *mut EvrNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Side length of the square crops the network expects.
///
/// # Safety
/// `net` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evr_net_input_size(net: *const EvrNet, out: *mut usize) -> EvrStatus {
    guard(|| {
        let net = handle(net, "net")?;
        *slice_mut(out, 1, "out")?.first_mut().expect("one element") = net.0.config().input_size;
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evr_stream_new(out: *mut *mut EvrStream) -> EvrStatus {
    guard(|| out_handle(out, EvrStream(StreamState::new())))
}

/// # Safety
/// `stream` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evr_stream_free(stream: *mut EvrStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Advances `stream` by one step with an RGB crop `image[3*S*S]` and a
/// stacked event crop `events[2*S*S]` (channel-first, `S` the input size);
/// writes root-relative `joints[21*3]` and `vertices[778*3]`.
///
/// # Safety
/// Handles must be live and arrays valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn evr_net_step(
    net: *const EvrNet,
    stream: *mut EvrStream,
    image: *const f32,
    events: *const f32,
    joints: *mut f64,
    vertices: *mut f64,
) -> EvrStatus {
    guard(|| {
        let net = &handle(net, "net")?.0;
        let stream = stream.as_mut().ok_or(Failure::Null("stream"))?;
        let s = net.config().input_size;
        let img = Image::from_shape_vec((3, s, s), slice(image, 3 * s * s, "image")?.to_vec()).expect("length checked");
        let ev = Image::from_shape_vec((2, s, s), slice(events, 2 * s * s, "events")?.to_vec()).expect("length checked");
        let input = StepInput {
            image: image_tensor(&img, net)?,
            events: image_tensor(&ev, net)?,
        };
        let pred = net.step(&input, &mut stream.0)?;
        let (j, v) = prediction_arrays(&pred, 0)?;
        slice_mut(joints, NUM_JOINTS * 3, "joints")?.copy_from_slice(j.as_slice().expect("standard layout"));
        slice_mut(vertices, NUM_VERTICES * 3, "vertices")?.copy_from_slice(v.as_slice().expect("standard layout"));
        Ok(())
    })
}

unsafe fn joint_views<'a>(pred: *const f64, gt: *const f64, n: usize) -> Result<(ArrayView2<'a, f64>, ArrayView2<'a, f64>), Failure> {
    let p = ArrayView2::from_shape((n, 3), slice(pred, n * 3, "pred")?).expect("length checked");
    let g = ArrayView2::from_shape((n, 3), slice(gt, n * 3, "gt")?).expect("length checked");
    Ok((p, g))
}

/// Root-aligned mean per-joint error of `n` joints (`[n*3]` arrays, root first).
///
/// # Safety
/// Arrays must hold `n*3` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn evr_mpjpe(pred: *const f64, gt: *const f64, n: usize, out: *mut f64) -> EvrStatus {
    guard(|| {
        let (p, g) = joint_views(pred, gt, n)?;
        slice_mut(out, 1, "out")?[0] = eval_metrics::mpjpe(p, g)?;
        Ok(())
    })
}

/// Mean per-joint error after similarity alignment.
///
/// # Safety
/// Arrays must hold `n*3` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn evr_pa_mpjpe(pred: *const f64, gt: *const f64, n: usize, out: *mut f64) -> EvrStatus {
    guard(|| {
        let (p, g) = joint_views(pred, gt, n)?;
        slice_mut(out, 1, "out")?[0] = eval_metrics::pa_mpjpe(p, g)?;
        Ok(())
    })
}

/// Area under the PCK curve over thresholds 0..=100 mm.
///
/// # Safety
/// `errors` must hold `n` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn evr_pck_auc(errors: *const f64, n: usize, out: *mut f64) -> EvrStatus {
    guard(|| {
        let (_, auc) = eval_metrics::pck_auc(slice(errors, n, "errors")?, &eval_metrics::default_thresholds())?;
        slice_mut(out, 1, "out")?[0] = auc;
        Ok(())
    })
}
