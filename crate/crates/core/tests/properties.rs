//! Cross-module properties over randomly drawn parameters.

use cusp_core::dyson::density_grid;
use cusp_core::io::{read_csv_column, write_csv};
use cusp_core::model::{instantiate_two_block, ModelFamily, ModelFile, Symmetry};
use cusp_core::pearcey::{ContourSpec, PearceyKernel};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn two_block_density_has_unit_mass(
        v11 in 0.5f64..1.5, v12 in 0.5f64..1.5, v22 in 0.5f64..1.5, shift in 0.0f64..1.5
    ) {
        let model = instantiate_two_block((1, 1), (v11, v12, v22), (-shift, shift)).unwrap();
        let profile = density_grid(&model, (-6.0, 6.0), 2e-3, 1e-7).unwrap();
        prop_assert!((profile.integral() - 1.0).abs() < 2e-3, "mass {}", profile.integral());
        prop_assert!(profile.rho.iter().all(|r| *r >= 0.0));
    }

    #[test]
    fn pearcey_kernel_is_real(x in -3.5f64..3.5, y in -3.5f64..3.5, alpha in -2.5f64..2.5) {
        let k = PearceyKernel::new(alpha, ContourSpec::default()).unwrap().evaluate(x, y).unwrap();
        prop_assert!(k.imaginary_part.abs() <= 1e-8);
        prop_assert!(k.abs_error_estimate <= 1e-8);
    }

    #[test]
    fn pearcey_density_is_positive(x in -4.0f64..4.0, alpha in -3.0f64..3.0) {
        let k = PearceyKernel::new(alpha, ContourSpec::default()).unwrap();
        prop_assert!(k.evaluate(x, x).unwrap().value > 0.0);
    }

    #[test]
    fn csv_columns_round_trip(values in prop::collection::vec(-1e12f64..1e12, 1..40)) {
        let path = std::env::temp_dir().join(format!("cusp-prop-{}.csv", std::process::id()));
        write_csv(&path, &["value"], values.iter().map(|&v| vec![v])).unwrap();
        prop_assert_eq!(read_csv_column(&path, Some("value")).unwrap(), values);
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn model_files_round_trip(n in 2usize..40, fraction in 0.1f64..0.9, shift in 0.0f64..2.0) {
        let file = ModelFile {
            n,
            symmetry: Symmetry::ComplexHermitian,
            family: ModelFamily::TwoBlock { sizes: None, fraction, variances: (1.0, 0.8, 1.2), shifts: (-shift, shift) },
        };
        let text = file.to_toml().unwrap();
        let back = ModelFile::parse(&text).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(back.instantiate().unwrap().n(), n);
    }
}
