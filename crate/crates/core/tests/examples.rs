//! Every example runs to completion.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/examples/",
                stringify!($name),
                ".rs"
            ));
        }

        #[test]
        fn $name() {
            $name::run_example().unwrap();
        }
    };
}

example!(quickstart);
example!(restandardization);
example!(files);
example!(scenario_study);
example!(power);
example!(selection);
example!(distributions);
