//! Small dense neural-network kernels over channel-major batches.

mod layers;
mod direct;
mod real;

pub use layers::{
    batchnorm_rows_backward, batchnorm_rows_infer, batchnorm_rows_train, conv3x3,
    conv3x3_backward, maxpool2, maxpool2_backward, relu_backward, relu_inplace, update_running,
    BnCache, FeatureMap, BN_EPS, BN_MOMENTUM,
};
pub use real::{gemm, MatRef, Real};

/// Keeps freed heap memory mapped so the large per-step activation buffers
/// are recycled instead of faulted in afresh. Process-wide; a no-op outside
/// glibc.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables.
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}
