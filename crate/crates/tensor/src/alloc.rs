/// Activations of a batch are tens of megabytes and live for one step.
/// glibc hands such blocks straight back to the kernel, so every step pays
/// fresh page faults; keep them in the heap instead.
pub(crate) fn retain_large_blocks() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| {
            // SAFETY: mallopt only adjusts allocator thresholds.
            unsafe {
                libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
                libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
            }
        });
    }
}
