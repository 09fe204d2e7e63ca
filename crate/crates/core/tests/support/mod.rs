pub mod bridge;
pub mod oracle;

/// Declares `CHECKS` over the named functions and one `#[test]` per entry,
/// so runners without the test harness can call the same checks.
macro_rules! registry {
    ($($name:ident: $label:literal),* $(,)?) => {
        #[allow(dead_code)]
        pub const CHECKS: &[(&str, fn())] = &[$(($label, $name)),*];

        mod harness {
            $(#[test]
            fn $name() {
                super::$name()
            })*
        }
    };
}
pub(crate) use registry;
